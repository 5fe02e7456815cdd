#pragma once

// HTTP client for the scoring/generation service.
//
//   POST /score     {"query", "passages": [..], "model"}          -> {"scores": [..]}
//   POST /generate  {"prompt", "max_new_tokens", "temperature", "model"}
//                                                   -> {"text", "mean_logprob"}
//
// Bodies are UTF-8 application/json. Anything other than HTTP 200 with a
// well-formed body is a protocol error.

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "sysrev/error.hpp"

namespace sysrev::remote {

struct GenerateRequest {
  std::string prompt;
  int max_new_tokens = 64;
  double temperature = 0;
  std::optional<std::string> model;
};

struct GenerateResponse {
  std::string text;
  std::optional<double> mean_logprob;
};

inline nlohmann::json to_json(const GenerateRequest& r) {
  return {{"prompt", r.prompt},
          {"max_new_tokens", r.max_new_tokens},
          {"temperature", r.temperature},
          {"model", r.model ? nlohmann::json(*r.model) : nlohmann::json(nullptr)}};
}

inline std::string excerpt(std::string_view s, std::size_t n = 200) {
  if (s.size() <= n) return std::string(s);
  return std::string(s.substr(0, n)) + "...";
}

class Client {
 public:
  explicit Client(std::string endpoint, int timeout_ms = 30000)
      : endpoint_(std::move(endpoint)), timeout_ms_(timeout_ms) {
    auto scheme = endpoint_.find("://");
    auto path_at = endpoint_.find('/', scheme == std::string::npos ? 0 : scheme + 3);
    if (path_at == std::string::npos) {
      host_ = endpoint_;
    } else {
      host_ = endpoint_.substr(0, path_at);
      base_path_ = endpoint_.substr(path_at);
      while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
    }
  }

  const std::string& endpoint() const { return endpoint_; }

  std::vector<double> score(const std::string& query, const std::vector<std::string>& passages,
                            const std::optional<std::string>& model) const {
    nlohmann::json body = {{"query", query},
                           {"passages", passages},
                           {"model", model ? nlohmann::json(*model) : nlohmann::json(nullptr)}};
    const std::string raw = post("/score", body.dump());
    nlohmann::json reply = parse(raw);
    if (!reply.is_object() || !reply.contains("scores") || !reply["scores"].is_array())
      throw ProtocolError(endpoint_, "/score response lacks a 'scores' array: " + excerpt(raw));
    const auto& arr = reply["scores"];
    if (arr.size() != passages.size())
      throw ProtocolError(endpoint_, "/score returned " + std::to_string(arr.size()) + " scores for " +
                                         std::to_string(passages.size()) + " passages: " + excerpt(raw));
    std::vector<double> out;
    out.reserve(arr.size());
    for (const auto& v : arr) {
      if (!v.is_number() || !std::isfinite(v.get<double>()))
        throw ProtocolError(endpoint_, "/score returned a non-finite or non-numeric score: " + excerpt(raw));
      out.push_back(v.get<double>());
    }
    return out;
  }

  GenerateResponse generate(const GenerateRequest& req) const {
    const std::string raw = post("/generate", to_json(req).dump());
    nlohmann::json reply = parse(raw);
    if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string())
      throw ProtocolError(endpoint_, "/generate response lacks a 'text' string: " + excerpt(raw));
    GenerateResponse out;
    out.text = reply["text"].get<std::string>();
    if (reply.contains("mean_logprob") && !reply["mean_logprob"].is_null()) {
      if (!reply["mean_logprob"].is_number())
        throw ProtocolError(endpoint_, "/generate mean_logprob is not a number: " + excerpt(raw));
      out.mean_logprob = reply["mean_logprob"].get<double>();
    }
    return out;
  }

 private:
  std::string post(const std::string& path, const std::string& body) const {
    httplib::Client cli(host_);
    const time_t sec = timeout_ms_ / 1000;
    const time_t usec = (timeout_ms_ % 1000) * 1000;
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    cli.set_write_timeout(sec, usec);
    auto res = cli.Post(base_path_ + path, body, "application/json");
    if (!res)
      throw RemoteError(endpoint_, "remote service " + endpoint_ + " unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw ProtocolError(endpoint_, "remote service " + endpoint_ + path + " returned HTTP " +
                                         std::to_string(res->status) + ": " + excerpt(res->body));
    return res->body;
  }

  nlohmann::json parse(const std::string& raw) const {
    try {
      return nlohmann::json::parse(raw);
    } catch (const nlohmann::json::parse_error&) {
      throw ProtocolError(endpoint_, "malformed JSON from " + endpoint_ + ": " + excerpt(raw));
    }
  }

  std::string endpoint_;
  std::string host_;
  std::string base_path_;
  int timeout_ms_;
};

}  // namespace sysrev::remote
