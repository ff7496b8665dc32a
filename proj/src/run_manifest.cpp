#include "distill/run_manifest.hpp"

#include "distill/digest.hpp"
#include "distill/errors.hpp"

#include <chrono>
#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

namespace distill {

json RunManifest::to_json() const {
    json j;
    j["run_id"] = run_id;
    j["config_digest"] = config_digest;
    j["dataset_digests"] = json::object();
    for (const auto& [name, digest] : dataset_digests) {
        j["dataset_digests"][name] = digest;
    }
    j["templates"] = templates;
    j["generation_config"] = generation_config;
    json stages_json = json::object();
    for (const auto& [name, stage] : stages) {
        json artifacts = json::object();
        for (const auto& [key, ref] : stage.artifacts) {
            artifacts[key] = {{"path", ref.path}, {"digest", ref.digest}};
        }
        stages_json[name] = {{"status", stage.status},
                             {"inputs_digest", stage.inputs_digest},
                             {"artifacts", std::move(artifacts)},
                             {"details", stage.details}};
    }
    j["stages"] = std::move(stages_json);
    return j;
}

RunManifest RunManifest::from_json(const json& j) {
    RunManifest m;
    try {
        m.run_id = j.value("run_id", std::string());
        m.config_digest = j.value("config_digest", std::string());
        const json dataset_digests_json = j.value("dataset_digests", json::object());
        for (const auto& [name, digest] : dataset_digests_json.items()) {
            m.dataset_digests[name] = digest.get<std::string>();
        }
        m.templates = j.value("templates", json::array());
        m.generation_config = j.value("generation_config", json::object());
        const json stages_json = j.value("stages", json::object());
        for (const auto& [name, sj] : stages_json.items()) {
            StageRecord st;
            st.status = sj.at("status").get<std::string>();
            st.inputs_digest = sj.at("inputs_digest").get<std::string>();
            for (const auto& [key, ref] : sj.at("artifacts").items()) {
                st.artifacts[key] = {ref.at("path").get<std::string>(), ref.at("digest").get<std::string>()};
            }
            st.details = sj.value("details", json::object());
            m.stages[name] = std::move(st);
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("run manifest: ") + e.what());
    }
    return m;
}

RunManifest RunManifest::load_or_new(const std::filesystem::path& run_dir) {
    auto path = run_dir / "manifest.json";
    if (!std::filesystem::exists(path)) {
        return {};
    }
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

void RunManifest::save(const std::filesystem::path& run_dir) const {
    std::filesystem::create_directories(run_dir);
    write_file_atomic(run_dir / "manifest.json", to_json().dump(2) + "\n");
}

bool RunManifest::up_to_date(const std::filesystem::path& run_dir, const std::string& stage,
                             const std::string& inputs_digest) const {
    auto it = stages.find(stage);
    if (it == stages.end() || it->second.status != "done" || it->second.inputs_digest != inputs_digest) {
        return false;
    }
    for (const auto& [key, ref] : it->second.artifacts) {
        auto path = run_dir / ref.path;
        if (!std::filesystem::exists(path) || sha256_file(path) != ref.digest) {
            return false;
        }
    }
    return true;
}

void record_timestamp(const std::filesystem::path& run_dir, const std::string& stage) {
    auto path = run_dir / "timestamps.json";
    json j = json::object();
    if (std::filesystem::exists(path)) {
        try {
            j = json::parse(read_file(path));
        } catch (const json::parse_error&) {
            j = json::object();
        }
    }
    auto now = std::chrono::duration_cast<std::chrono::seconds>(
                   std::chrono::system_clock::now().time_since_epoch())
                   .count();
    j[stage] = now;
    write_file_atomic(path, j.dump(2) + "\n");
}

RunLock::RunLock(const std::filesystem::path& run_dir) {
    std::filesystem::create_directories(run_dir);
    auto path = run_dir / ".lock";
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) {
        throw IoError("cannot open lock file " + path.string());
    }
    if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw ConfigError("run directory " + run_dir.string() + " is locked by another process");
    }
}

RunLock::~RunLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

}  // namespace distill
