#include <regex>
#include <thread>

#include "distalign/error.hpp"
#include "distalign/oracles.hpp"
#include "httplib.h"
#include "json.hpp"

namespace distalign {

using nlohmann::json;

namespace {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // request path of the evaluate call
};

Endpoint parse_endpoint(const std::string& url) {
  static const std::regex pattern(R"(^(http://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, pattern))
    throw InvalidConfig("remote endpoint must look like http://host[:port][/prefix]: " + url);
  std::string prefix = m[2].matched ? m[2].str() : std::string();
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {m[1].str(), prefix + "/evaluate"};
}

std::string error_message(const std::string& body) {
  const auto doc = json::parse(body, nullptr, false);
  if (doc.is_object() && doc.contains("error") && doc["error"].is_string())
    return doc["error"].get<std::string>();
  return body.substr(0, 200);
}

}  // namespace

std::string encode_evaluate_request(const WeightVector& a, const std::string& prompt,
                                    const std::vector<std::string>& labels, const OracleConfig& cfg) {
  json body;
  body["weights"] = std::vector<double>(a.values().begin(), a.values().end());
  body["prompt"] = prompt;
  body["labels"] = labels;
  body["num_samples"] = cfg.num_samples;
  body["seed"] = cfg.seed;
  return body.dump();
}

FrequencyVector decode_evaluate_response(const std::string& body, std::size_t n, std::size_t num_samples) {
  const auto doc = json::parse(body, nullptr, false);
  if (doc.is_discarded()) throw ProtocolError("response is not valid JSON");
  if (!doc.is_object()) throw ProtocolError("response must be a JSON object");
  if (!doc.contains("counts") || !doc["counts"].is_array())
    throw ProtocolError("response is missing the counts array");
  if (!doc.contains("num_samples") || !doc["num_samples"].is_number_integer())
    throw ProtocolError("response is missing num_samples");
  if (doc["num_samples"].get<std::int64_t>() != static_cast<std::int64_t>(num_samples))
    throw ProtocolError("response num_samples " + doc["num_samples"].dump() + " != requested " +
                        std::to_string(num_samples));
  const auto& arr = doc["counts"];
  if (arr.size() != n)
    throw ProtocolError("response has " + std::to_string(arr.size()) + " counts, expected " + std::to_string(n));
  std::vector<std::uint64_t> counts;
  counts.reserve(n);
  std::uint64_t sum = 0;
  for (const auto& c : arr) {
    if (!c.is_number_integer() || c.get<std::int64_t>() < 0)
      throw ProtocolError("counts must be non-negative integers, got " + c.dump());
    counts.push_back(c.get<std::uint64_t>());
    sum += counts.back();
  }
  if (sum != num_samples)
    throw ProtocolError("counts sum to " + std::to_string(sum) + ", expected " + std::to_string(num_samples));
  return FrequencyVector(std::move(counts));
}

FrequencyVector remote_evaluate(const std::string& endpoint, const WeightVector& a,
                                const std::string& prompt, const std::vector<std::string>& labels,
                                const OracleConfig& cfg, const RetryPolicy& retry) {
  if (a.size() != labels.size())
    throw InvalidInput("weight vector has " + std::to_string(a.size()) + " entries but there are " +
                       std::to_string(labels.size()) + " labels");
  if (cfg.num_samples == 0) throw InvalidInput("num_samples must be >= 1");
  const auto target = parse_endpoint(endpoint);
  const std::string request = encode_evaluate_request(a, prompt, labels, cfg);

  httplib::Client client(target.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(retry.timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(retry.timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());

  std::string last_failure = "no attempt made";
  auto backoff = retry.initial_backoff;
  for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
    auto res = client.Post(target.path, request, "application/json");
    if (!res) {
      last_failure = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last_failure = "HTTP " + std::to_string(res->status) + ": " + error_message(res->body);
    } else if (res->status != 200) {
      throw ProtocolError("HTTP " + std::to_string(res->status) + ": " + error_message(res->body));
    } else {
      return decode_evaluate_response(res->body, labels.size(), cfg.num_samples);
    }
    if (attempt < retry.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw OracleUnavailable("remote oracle at " + endpoint + " failed after " +
                          std::to_string(retry.max_attempts) + " attempts (" + last_failure + ")");
}

RemoteOracle::RemoteOracle(std::string endpoint, std::string prompt, std::vector<std::string> labels,
                           RetryPolicy retry)
    : endpoint_(std::move(endpoint)), prompt_(std::move(prompt)), labels_(std::move(labels)), retry_(retry) {
  parse_endpoint(endpoint_);
  if (labels_.size() < 2) throw InvalidConfig("remote oracle needs at least two labels");
  if (retry_.max_attempts < 1) throw InvalidConfig("retry policy needs at least one attempt");
}

FrequencyVector RemoteOracle::evaluate(const WeightVector& a, const OracleConfig& cfg) const {
  check_arity(a);
  return remote_evaluate(endpoint_, a, prompt_, labels_, cfg, retry_);
}

}  // namespace distalign
