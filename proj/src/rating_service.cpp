#include "distill/rating_service.hpp"

#include "distill/core_model.hpp"
#include "distill/digest.hpp"
#include "distill/errors.hpp"
#include "distill/logging.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fcntl.h>
#include <random>
#include <set>
#include <unistd.h>

namespace distill {

namespace {

constexpr const char* kLogSuffix = ".events.jsonl";

// Unbiased draw from [0, bound) by rejection.
std::uint64_t bounded(std::mt19937_64& rng, std::uint64_t bound) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return x % bound;
}

std::string hex64(std::uint64_t v, int digits) {
    static const char* kHex = "0123456789abcdef";
    std::string s(static_cast<std::size_t>(digits), '0');
    for (int i = digits - 1; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = kHex[v & 0xF];
        v >>= 4;
    }
    return s;
}

void append_durable(const std::filesystem::path& path, const std::string& line) {
    int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
    if (fd < 0) {
        throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    }
    std::string_view rest = line;
    while (!rest.empty()) {
        auto n = ::write(fd, rest.data(), rest.size());
        if (n < 0) {
            if (errno == EINTR) {
                continue;
            }
            ::close(fd);
            throw IoError("write to " + path.string() + " failed: " + std::strerror(errno));
        }
        rest.remove_prefix(static_cast<std::size_t>(n));
    }
    if (::fsync(fd) != 0) {
        ::close(fd);
        throw IoError("fsync of " + path.string() + " failed");
    }
    ::close(fd);
}

json item_to_json(const SessionItem& item) {
    return {{"item_id", item.item_id},   {"alias", item.alias},          {"sample_id", item.sample_id},
            {"model", item.model},       {"chat_history", item.chat_history}, {"query", item.query},
            {"response", item.response}};
}

SessionItem item_from_json(const json& j) {
    SessionItem item;
    item.item_id = j.at("item_id").get<std::string>();
    item.alias = j.at("alias").get<std::string>();
    item.sample_id = j.at("sample_id").get<std::string>();
    item.model = j.at("model").get<std::string>();
    item.chat_history = j.at("chat_history").get<std::vector<std::string>>();
    item.query = j.at("query").get<std::string>();
    item.response = j.at("response").get<std::string>();
    return item;
}

void apply_rating(RatingSession& s, const std::string& item_id, int value) {
    if (value < kHumanRatingMin || value > kHumanRatingMax) {
        throw RangeError("rating " + std::to_string(value) + " outside 1..5");
    }
    auto it = std::find_if(s.items.begin(), s.items.end(),
                           [&](const SessionItem& i) { return i.item_id == item_id; });
    if (it == s.items.end()) {
        throw UnknownItemError("session " + s.session_id + " has no item '" + item_id + "'");
    }
    if (s.ratings.count(item_id) != 0) {
        throw DuplicateRatingError("item '" + item_id + "' is already rated");
    }
    s.ratings[item_id] = value;
}

}  // namespace

// ---- pool ----

std::vector<std::string> RatingPool::models() const {
    std::set<std::string> names;
    for (const auto& e : entries) {
        names.insert(e.model);
    }
    return {names.begin(), names.end()};
}

void RatingPool::validate() const {
    if (entries.empty()) {
        throw SchemaError("rating pool '" + name + "' is empty");
    }
    std::map<std::string, std::set<std::string>> by_model;
    std::set<std::string> all_samples;
    for (const auto& e : entries) {
        if (e.sample_id.empty() || e.model.empty()) {
            throw SchemaError("rating pool entry needs sample_id and model");
        }
        if (!by_model[e.model].insert(e.sample_id).second) {
            throw SchemaError("rating pool repeats (" + e.sample_id + ", " + e.model + ")");
        }
        all_samples.insert(e.sample_id);
    }
    for (const auto& [model, samples] : by_model) {
        for (const auto& s : all_samples) {
            if (samples.count(s) == 0) {
                throw UnbalancedPoolError("model '" + model + "' has no response for sample '" + s + "'");
            }
        }
    }
}

std::string RatingPool::digest() const {
    return sha256_hex(to_json().dump());
}

json RatingPool::to_json() const {
    json items = json::array();
    for (const auto& e : entries) {
        items.push_back({{"sample_id", e.sample_id},
                         {"model", e.model},
                         {"chat_history", e.chat_history},
                         {"query", e.query},
                         {"response", e.response}});
    }
    return {{"name", name}, {"entries", std::move(items)}};
}

RatingPool RatingPool::from_json(const json& j) {
    RatingPool pool;
    try {
        pool.name = j.at("name").get<std::string>();
        for (const auto& e : j.at("entries")) {
            PoolEntry entry;
            entry.sample_id = e.at("sample_id").get<std::string>();
            entry.model = e.at("model").get<std::string>();
            entry.chat_history = e.value("chat_history", std::vector<std::string>{});
            entry.query = e.at("query").get<std::string>();
            entry.response = e.at("response").get<std::string>();
            pool.entries.push_back(std::move(entry));
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("rating pool: ") + e.what());
    }
    return pool;
}

RatingPool RatingPool::from_file(const std::filesystem::path& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw SchemaError("rating pool " + path.string() + ": " + e.what());
    }
}

std::string_view to_string(SessionStatus s) {
    return s == SessionStatus::open ? "open" : "complete";
}

std::vector<std::size_t> seeded_permutation(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) {
        order[i] = i;
    }
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        auto j = static_cast<std::size_t>(bounded(rng, i));
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

json item_wire_view(const RatingSession& session, std::size_t index) {
    const auto& item = session.items.at(index);
    return {{"session_id", session.session_id},
            {"item_id", item.item_id},
            {"alias", item.alias},
            {"position", index + 1},
            {"total", session.items.size()},
            {"chat_history", item.chat_history},
            {"query", item.query},
            {"response", item.response},
            {"scale", {{"min", kHumanRatingMin},
                       {"max", kHumanRatingMax},
                       {"anchors", {{"1", "not helpful"}, {"5", "very helpful"}}}}}};
}

json session_wire_summary(const RatingSession& session) {
    json j{{"session_id", session.session_id},
           {"rater_id", session.rater_id},
           {"status", to_string(session.status())},
           {"rated", session.ratings.size()},
           {"total", session.items.size()}};
    if (session.ratings.empty()) {
        j["mean"] = nullptr;
    } else {
        double sum = 0;
        for (const auto& [id, v] : session.ratings) {
            sum += v;
        }
        j["mean"] = sum / static_cast<double>(session.ratings.size());
    }
    return j;
}

// ---- service ----

RatingService::RatingService(std::filesystem::path storage_dir, std::vector<RatingPool> pools)
    : dir_(std::move(storage_dir)) {
    for (auto& p : pools) {
        p.validate();
        auto name = p.name;
        if (!pools_.emplace(name, std::move(p)).second) {
            throw ConfigError("duplicate rating pool '" + name + "'");
        }
    }
    std::filesystem::create_directories(dir_);
    replay();
}

std::filesystem::path RatingService::log_path(const std::string& session_id) const {
    return dir_ / (session_id + kLogSuffix);
}

void RatingService::replay() {
    std::vector<std::filesystem::path> logs;
    for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
        auto name = entry.path().filename().string();
        if (entry.is_regular_file() && name.size() > std::strlen(kLogSuffix) &&
            name.ends_with(kLogSuffix)) {
            logs.push_back(entry.path());
        }
    }
    std::sort(logs.begin(), logs.end());
    for (const auto& path : logs) {
        auto text = read_file(path);
        auto slot = std::make_unique<Slot>();
        auto& s = slot->session;
        std::size_t pos = 0;
        std::size_t line_no = 0;
        while (pos < text.size()) {
            auto end = text.find('\n', pos);
            bool complete_line = end != std::string::npos;
            auto line = text.substr(pos, complete_line ? end - pos : std::string::npos);
            pos = complete_line ? end + 1 : text.size();
            ++line_no;
            json ev;
            try {
                ev = json::parse(line);
            } catch (const json::parse_error&) {
                if (!complete_line) {
                    // Torn final write: the rating was never acknowledged.
                    log_event(LogLevel::warn, "rating_log_torn_tail", {{"path", path.string()}});
                    break;
                }
                throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": corrupt event");
            }
            try {
                auto type = ev.at("type").get<std::string>();
                if (line_no == 1) {
                    if (type != "created") {
                        throw SchemaError(path.string() + ": first event must be 'created'");
                    }
                    s.session_id = ev.at("session_id").get<std::string>();
                    s.rater_id = ev.at("rater_id").get<std::string>();
                    s.pool_name = ev.at("pool").get<std::string>();
                    s.pool_digest = ev.at("pool_digest").get<std::string>();
                    s.seed = ev.at("seed").get<std::uint64_t>();
                    for (const auto& item : ev.at("items")) {
                        s.items.push_back(item_from_json(item));
                    }
                } else if (type == "rated") {
                    apply_rating(s, ev.at("item").get<std::string>(), ev.at("value").get<int>());
                } else {
                    throw SchemaError(path.string() + ": unknown event '" + type + "'");
                }
            } catch (const json::exception& e) {
                throw SchemaError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        if (s.session_id.empty()) {
            continue;
        }
        auto id = s.session_id;
        sessions_[id] = std::move(slot);
    }
}

RatingService::Slot& RatingService::slot(const std::string& session_id) const {
    std::shared_lock lock(sessions_mu_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) {
        throw UnknownSessionError("no session '" + session_id + "'");
    }
    return *it->second;
}

RatingSession RatingService::create_session(const std::string& pool_name, const std::string& rater_id,
                                            std::uint64_t seed) {
    auto pit = pools_.find(pool_name);
    if (pit == pools_.end()) {
        throw ConfigError("unknown rating pool '" + pool_name + "'");
    }
    if (rater_id.empty()) {
        throw ConfigError("rater id is required");
    }
    const auto& pool = pit->second;
    // Canonical item set: (sample, model) sorted, so entry order in the pool
    // file does not affect the shuffle.
    std::vector<const PoolEntry*> canonical;
    for (const auto& e : pool.entries) {
        canonical.push_back(&e);
    }
    std::sort(canonical.begin(), canonical.end(), [](const PoolEntry* a, const PoolEntry* b) {
        return std::tie(a->sample_id, a->model) < std::tie(b->sample_id, b->model);
    });

    RatingSession s;
    s.rater_id = rater_id;
    s.pool_name = pool_name;
    s.pool_digest = pool.digest();
    s.seed = seed;

    auto order = seeded_permutation(canonical.size(), seed);
    std::mt19937_64 labels(seed ^ 0x9e3779b97f4a7c15ULL);
    std::set<std::string> used_ids;
    std::set<std::string> used_aliases;
    for (auto idx : order) {
        const auto& e = *canonical[idx];
        SessionItem item;
        do {
            item.item_id = "item-" + hex64(labels(), 16);
        } while (!used_ids.insert(item.item_id).second);
        do {
            item.alias = "Response " + hex64(labels(), 4);
        } while (!used_aliases.insert(item.alias).second);
        item.sample_id = e.sample_id;
        item.model = e.model;
        item.chat_history = e.chat_history;
        item.query = e.query;
        item.response = e.response;
        s.items.push_back(std::move(item));
    }

    std::unique_lock lock(sessions_mu_);
    for (std::size_t n = sessions_.size();; ++n) {
        auto id = "sess-" + sha256_hex(s.pool_digest + "\n" + rater_id + "\n" + std::to_string(seed) + "\n" +
                                       std::to_string(n))
                                .substr(0, 16);
        if (sessions_.count(id) == 0 && !std::filesystem::exists(log_path(id))) {
            s.session_id = id;
            break;
        }
    }
    json items = json::array();
    for (const auto& item : s.items) {
        items.push_back(item_to_json(item));
    }
    json created{{"type", "created"},      {"session_id", s.session_id}, {"rater_id", s.rater_id},
                 {"pool", s.pool_name},    {"pool_digest", s.pool_digest}, {"seed", s.seed},
                 {"items", std::move(items)}};
    append_durable(log_path(s.session_id), created.dump() + "\n");
    auto slot = std::make_unique<Slot>();
    slot->session = s;
    sessions_[s.session_id] = std::move(slot);
    log_event(LogLevel::info, "rating_session_created",
              {{"session_id", s.session_id}, {"rater_id", rater_id}, {"items", s.items.size()}, {"seed", seed}});
    return s;
}

std::optional<json> RatingService::next_item(const std::string& session_id) const {
    auto& sl = slot(session_id);
    std::lock_guard lock(sl.mu);
    const auto& s = sl.session;
    for (std::size_t i = 0; i < s.items.size(); ++i) {
        if (s.ratings.count(s.items[i].item_id) == 0) {
            return item_wire_view(s, i);
        }
    }
    return std::nullopt;
}

RatingSession RatingService::submit_rating(const std::string& session_id, const std::string& item_id, int value) {
    auto& sl = slot(session_id);
    std::lock_guard lock(sl.mu);
    RatingSession updated = sl.session;
    apply_rating(updated, item_id, value);
    // Write-ahead: the event is durable before the in-memory state changes.
    json ev{{"type", "rated"}, {"item", item_id}, {"value", value}};
    append_durable(log_path(session_id), ev.dump() + "\n");
    sl.session = std::move(updated);
    return sl.session;
}

RatingSession RatingService::session(const std::string& session_id) const {
    auto& sl = slot(session_id);
    std::lock_guard lock(sl.mu);
    return sl.session;
}

std::vector<std::string> RatingService::session_ids() const {
    std::shared_lock lock(sessions_mu_);
    std::vector<std::string> ids;
    for (const auto& [id, slot] : sessions_) {
        ids.push_back(id);
    }
    return ids;
}

std::vector<RatedSession> RatingService::export_sessions(bool include_partial, const std::string& rater_filter,
                                                         const std::string& pool_filter) const {
    std::vector<RatedSession> out;
    for (const auto& id : session_ids()) {
        auto s = session(id);
        if (!include_partial && s.status() != SessionStatus::complete) {
            continue;
        }
        if (!rater_filter.empty() && s.rater_id != rater_filter) {
            continue;
        }
        if (!pool_filter.empty() && s.pool_name != pool_filter) {
            continue;
        }
        RatedSession r{s.session_id, s.rater_id, {}};
        for (const auto& item : s.items) {
            auto it = s.ratings.find(item.item_id);
            if (it != s.ratings.end()) {
                r.ratings.push_back({item.sample_id, item.model, it->second});
            }
        }
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<std::string> RatingService::model_names() const {
    std::set<std::string> names;
    for (const auto& [name, pool] : pools_) {
        for (const auto& m : pool.models()) {
            names.insert(m);
        }
    }
    return {names.begin(), names.end()};
}

json to_json(const RatedSession& s) {
    json ratings = json::array();
    for (const auto& r : s.ratings) {
        ratings.push_back({{"sample_id", r.sample_id}, {"model", r.model}, {"value", r.value}});
    }
    return {{"session_id", s.session_id}, {"rater_id", s.rater_id}, {"ratings", std::move(ratings)}};
}

RatedSession rated_session_from_json(const json& j) {
    RatedSession s;
    try {
        s.session_id = j.at("session_id").get<std::string>();
        s.rater_id = j.at("rater_id").get<std::string>();
        for (const auto& r : j.at("ratings")) {
            s.ratings.push_back(
                {r.at("sample_id").get<std::string>(), r.at("model").get<std::string>(), r.at("value").get<int>()});
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("rated session: ") + e.what());
    }
    return s;
}

}  // namespace distill
