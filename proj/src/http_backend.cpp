#include "distill/http_client.hpp"

#include "distill/errors.hpp"

#include "httplib.h"


namespace distill {

struct HttpJsonClient::Impl {
    std::string scheme_host_port;
    std::string prefix;
    std::chrono::milliseconds timeout;
    // httplib::Client is not safe for concurrent requests; one per call.
    std::unique_ptr<httplib::Client> make_client() const {
        auto client = std::make_unique<httplib::Client>(scheme_host_port);
        auto secs = timeout.count() / 1000;
        auto usecs = (timeout.count() % 1000) * 1000;
        client->set_connection_timeout(secs, usecs);
        client->set_read_timeout(secs, usecs);
        client->set_write_timeout(secs, usecs);
        return client;
    }
};

namespace {

httplib::Headers to_headers(const std::map<std::string, std::string>& headers) {
    httplib::Headers out;
    for (const auto& [k, v] : headers) {
        out.emplace(k, v);
    }
    return out;
}

HttpResponse unwrap(const httplib::Result& result, const std::string& what) {
    if (!result) {
        throw TransportError(what + ": " + httplib::to_string(result.error()));
    }
    return HttpResponse{result->status, result->body};
}

}  // namespace

HttpJsonClient::HttpJsonClient(const std::string& base_url, std::chrono::milliseconds timeout)
    : impl_(std::make_unique<Impl>()) {
    auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw ConfigError("base URL must include a scheme: " + base_url);
    }
    auto path_start = base_url.find('/', scheme_end + 3);
    impl_->scheme_host_port = base_url.substr(0, path_start);
    impl_->prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);
    while (!impl_->prefix.empty() && impl_->prefix.back() == '/') {
        impl_->prefix.pop_back();
    }
    impl_->timeout = timeout;
}

HttpJsonClient::~HttpJsonClient() = default;
HttpJsonClient::HttpJsonClient(HttpJsonClient&&) noexcept = default;
HttpJsonClient& HttpJsonClient::operator=(HttpJsonClient&&) noexcept = default;

HttpResponse HttpJsonClient::post(const std::string& path, const std::string& body,
                                  const std::map<std::string, std::string>& headers) const {
    auto client = impl_->make_client();
    auto full = impl_->prefix + path;
    return unwrap(client->Post(full, to_headers(headers), body, "application/json"), "POST " + full);
}

HttpResponse HttpJsonClient::get(const std::string& path, const std::map<std::string, std::string>& headers) const {
    auto client = impl_->make_client();
    auto full = impl_->prefix + path;
    return unwrap(client->Get(full, to_headers(headers)), "GET " + full);
}

}  // namespace distill
