#pragma once

#include "distill/json.hpp"

#include <filesystem>
#include <map>
#include <string>

namespace distill {

struct ArtifactRef {
    std::string path;  // relative to the run directory
    std::string digest;
};

struct StageRecord {
    std::string status;         // "done" | "failed"
    std::string inputs_digest;  // what the stage was computed from
    std::map<std::string, ArtifactRef> artifacts;
    json details = json::object();
};

// manifest.json of a run directory. Everything here is content; wall-clock
// timestamps go to timestamps.json so identical inputs give identical bytes.
struct RunManifest {
    std::string run_id;
    std::string config_digest;
    std::map<std::string, std::string> dataset_digests;
    json templates = json::array();  // [{id, version}]
    json generation_config = json::object();
    std::map<std::string, StageRecord> stages;

    json to_json() const;
    static RunManifest from_json(const json& j);

    static RunManifest load_or_new(const std::filesystem::path& run_dir);
    void save(const std::filesystem::path& run_dir) const;

    // True when the stage last ran on the same inputs and every artifact it
    // recorded still has the recorded digest.
    bool up_to_date(const std::filesystem::path& run_dir, const std::string& stage,
                    const std::string& inputs_digest) const;
};

void record_timestamp(const std::filesystem::path& run_dir, const std::string& stage);

// Exclusive advisory lock on <run_dir>/.lock for the object's lifetime.
// A second holder gets ConfigError immediately.
class RunLock {
public:
    explicit RunLock(const std::filesystem::path& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

private:
    int fd_ = -1;
};

}  // namespace distill
