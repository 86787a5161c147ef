#pragma once

#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitconf/conformal.hpp"
#include "splitconf/errors.hpp"

namespace splitconf {

namespace detail {

// IEEE-754 hex encoding so serialized reals round-trip bit-exactly.
inline std::string double_to_hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

inline double hex_to_double(const std::string& s) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end == begin) {
    throw invalid_input_error("rule JSON: bad hex float '" + s + "'");
  }
  return v;
}

inline nlohmann::json vec_to_hex(const std::vector<double>& v) {
  nlohmann::json arr = nlohmann::json::array();
  for (double x : v) arr.push_back(double_to_hex(x));
  return arr;
}

inline std::vector<double> hex_to_vec(const nlohmann::json& arr) {
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& x : arr) out.push_back(hex_to_double(x.get<std::string>()));
  return out;
}

}  // namespace detail

inline const char* to_string(RuleKind k) {
  switch (k) {
    case RuleKind::static_threshold: return "static";
    case RuleKind::adaptive: return "adaptive";
    case RuleKind::two_sided: return "two-sided";
    case RuleKind::grid_full_conformal: return "grid-full-conformal";
  }
  return "?";
}

inline RuleKind rule_kind_from_string(const std::string& s) {
  if (s == "static") return RuleKind::static_threshold;
  if (s == "adaptive") return RuleKind::adaptive;
  if (s == "two-sided") return RuleKind::two_sided;
  if (s == "grid-full-conformal") return RuleKind::grid_full_conformal;
  throw invalid_input_error("unknown rule kind '" + s + "'");
}

inline nlohmann::json rule_to_json(const ConfidenceRule& rule) {
  if (rule.kind == RuleKind::grid_full_conformal) {
    throw unsupported_error(
        "grid-full-conformal rules are sample-bound and not serializable");
  }
  nlohmann::json j;
  j["schema_version"] = 1;
  j["kind"] = to_string(rule.kind);
  j["alpha_desired"] = detail::double_to_hex(rule.alpha_desired);
  j["alpha_fitted"] = detail::double_to_hex(rule.alpha_fitted);
  j["feature_map_name"] = rule.feature_map_name;
  j["dim"] = rule.dim;
  switch (rule.kind) {
    case RuleKind::static_threshold:
      j["tau"] = detail::double_to_hex(*rule.tau);
      break;
    case RuleKind::adaptive:
      j["theta"] = detail::vec_to_hex(*rule.theta);
      break;
    case RuleKind::two_sided:
      j["theta_lower"] = detail::vec_to_hex(*rule.theta_lower);
      j["theta_upper"] = detail::vec_to_hex(*rule.theta_upper);
      j["crossing"] = rule.crossing;
      break;
    default:
      break;
  }
  if (rule.jitter.has_value()) {
    j["jitter"] = {{"scale", detail::double_to_hex(rule.jitter->scale)},
                   {"seed", rule.jitter->seed}};
  }
  return j;
}

inline ConfidenceRule rule_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1) {
    throw invalid_input_error("rule JSON: unsupported schema version");
  }
  ConfidenceRule rule;
  rule.kind = rule_kind_from_string(j.at("kind").get<std::string>());
  rule.alpha_desired =
      detail::hex_to_double(j.at("alpha_desired").get<std::string>());
  rule.alpha_fitted =
      detail::hex_to_double(j.at("alpha_fitted").get<std::string>());
  rule.feature_map_name = j.at("feature_map_name").get<std::string>();
  rule.dim = j.at("dim").get<std::size_t>();
  switch (rule.kind) {
    case RuleKind::static_threshold:
      rule.tau = detail::hex_to_double(j.at("tau").get<std::string>());
      break;
    case RuleKind::adaptive:
      rule.theta = detail::hex_to_vec(j.at("theta"));
      break;
    case RuleKind::two_sided:
      rule.theta_lower = detail::hex_to_vec(j.at("theta_lower"));
      rule.theta_upper = detail::hex_to_vec(j.at("theta_upper"));
      rule.crossing = j.value("crossing", false);
      break;
    default:
      throw unsupported_error("rule JSON: kind not deserializable");
  }
  if (j.contains("jitter")) {
    rule.jitter = JitterSpec(
        detail::hex_to_double(j["jitter"].at("scale").get<std::string>()),
        j["jitter"].at("seed").get<std::uint64_t>());
  }
  return rule;
}

}  // namespace splitconf
