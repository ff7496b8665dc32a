#pragma once

#include "distill/evaluation.hpp"
#include "distill/json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace distill {

// One model's response to one sample, as submitted for human rating.
struct PoolEntry {
    std::string sample_id;
    std::string model;
    std::vector<std::string> chat_history;
    std::string query;
    std::string response;
};

struct RatingPool {
    std::string name;
    std::vector<PoolEntry> entries;

    // Models and the sample ids they cover, both sorted.
    std::vector<std::string> models() const;
    // SchemaError on empty or duplicate entries; UnbalancedPoolError when a
    // model misses a sample another model covers.
    void validate() const;
    std::string digest() const;

    json to_json() const;
    // {"name": ..., "entries": [{sample_id, model, chat_history, query, response}]}
    static RatingPool from_json(const json& j);
    static RatingPool from_file(const std::filesystem::path& path);
};

enum class SessionStatus { open, complete };
std::string_view to_string(SessionStatus s);

struct SessionItem {
    std::string item_id;
    std::string alias;
    std::string sample_id;
    std::string model;
    std::vector<std::string> chat_history;
    std::string query;
    std::string response;
};

struct RatingSession {
    std::string session_id;
    std::string rater_id;
    std::string pool_name;
    std::string pool_digest;
    std::uint64_t seed = 0;
    std::vector<SessionItem> items;  // presentation order
    std::map<std::string, int> ratings;  // item id -> 1..5

    SessionStatus status() const {
        return ratings.size() == items.size() ? SessionStatus::complete : SessionStatus::open;
    }
};

// The rater-facing view of an item: no model name, endpoint or run metadata.
json item_wire_view(const RatingSession& session, std::size_t index);
json session_wire_summary(const RatingSession& session);

// Fisher-Yates over [0, n) driven by mt19937_64(seed), with an unbiased
// bounded draw so the order is identical across standard libraries.
std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed);

// Blind rating sessions persisted as append-only event logs, one file per
// session under storage_dir, replayed on construction.
class RatingService {
public:
    RatingService(std::filesystem::path storage_dir, std::vector<RatingPool> pools);

    RatingSession create_session(const std::string& pool_name, const std::string& rater_id, std::uint64_t seed);
    // Index into session.items of the first unrated item; nullopt when done.
    std::optional<json> next_item(const std::string& session_id) const;
    RatingSession submit_rating(const std::string& session_id, const std::string& item_id, int value);
    RatingSession session(const std::string& session_id) const;
    std::vector<std::string> session_ids() const;

    // Complete sessions only unless include_partial; unrated items are absent.
    // rater_filter / pool_filter, when nonempty, restrict the output.
    std::vector<RatedSession> export_sessions(bool include_partial, const std::string& rater_filter = {},
                                              const std::string& pool_filter = {}) const;

    // Every configured model name, for blindness checks.
    std::vector<std::string> model_names() const;

private:
    struct Slot {
        mutable std::mutex mu;
        RatingSession session;
    };

    void replay();
    std::filesystem::path log_path(const std::string& session_id) const;
    Slot& slot(const std::string& session_id) const;

    std::filesystem::path dir_;
    std::map<std::string, RatingPool> pools_;
    mutable std::shared_mutex sessions_mu_;
    std::map<std::string, std::unique_ptr<Slot>> sessions_;
};

json to_json(const RatedSession& s);
RatedSession rated_session_from_json(const json& j);

// HTTP front end. Routes:
//   POST /sessions                  {"pool", "rater", "seed"}
//   GET  /sessions/{id}/next
//   POST /sessions/{id}/ratings     {"item", "value"}
//   GET  /sessions/{id}/summary
//   GET  /export?partial=1&rater=..&pool=..
//   GET  /ui/...                    static files, when a directory is given
// Errors are {"code", "message"} with a 4xx status.
class RatingServer {
public:
    RatingServer(RatingService& service, std::optional<std::filesystem::path> static_dir = {});
    ~RatingServer();

    // Binds (port 0 picks a free port) and serves on a background thread.
    int start(const std::string& host, int port);
    // Binds and serves on the calling thread until stop().
    void run(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace distill
