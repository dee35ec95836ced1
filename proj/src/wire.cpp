#include "nameprobe/wire.hpp"

#include <cmath>

#include "nameprobe/errors.hpp"

namespace nameprobe::wire {

namespace {

template <typename T>
T get_field(const json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) throw ProtocolError(std::string("missing field '") + key + "'");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("field '") + key + "': " + e.what());
  }
}

std::vector<lm::TokenAlternative> parse_alternatives(const json& entry) {
  std::vector<lm::TokenAlternative> alts;
  if (entry.is_null()) return alts;
  if (entry.is_array()) {
    for (const auto& a : entry) {
      alts.push_back({get_field<std::string>(a, "token"), get_field<double>(a, "logprob")});
    }
  } else if (entry.is_object()) {
    // Legacy map form {token: logprob}; order is restored by sorting.
    for (auto it = entry.begin(); it != entry.end(); ++it) {
      if (!it.value().is_number()) throw ProtocolError("top_logprobs value is not a number");
      alts.push_back({it.key(), it.value().get<double>()});
    }
  } else {
    throw ProtocolError("top_logprobs entry must be an array or object");
  }
  std::stable_sort(alts.begin(), alts.end(), [](const auto& a, const auto& b) {
    if (a.logprob != b.logprob) return a.logprob > b.logprob;
    return a.token < b.token;
  });
  return alts;
}

}  // namespace

json completion_request_to_json(const std::string& model_id, const lm::CompletionRequest& r) {
  json body = {{"model", model_id},
               {"prompt", r.prompt},
               {"max_tokens", r.sampling.max_tokens},
               {"n", r.n_samples},
               {"logprobs", r.logprob_top_n},
               {"seed", r.sampling.seed}};
  switch (r.sampling.mode) {
    case lm::DecodingMode::greedy:
      body["temperature"] = 0.0;
      break;
    case lm::DecodingMode::nucleus:
      body["temperature"] = 1.0;
      body["top_p"] = r.sampling.top_p;
      break;
    case lm::DecodingMode::topk:
      body["temperature"] = 1.0;
      body["top_k"] = r.sampling.top_k;
      break;
  }
  return body;
}

lm::CompletionRequest completion_request_from_json(const json& body) {
  lm::CompletionRequest r;
  r.prompt = get_field<std::string>(body, "prompt");
  r.sampling.max_tokens = get_field<std::uint32_t>(body, "max_tokens");
  r.n_samples = body.contains("n") ? get_field<std::uint32_t>(body, "n") : 1;
  r.logprob_top_n = body.contains("logprobs") ? get_field<std::uint32_t>(body, "logprobs") : 0;
  r.sampling.seed = body.contains("seed") ? get_field<std::uint64_t>(body, "seed") : 0;
  const double temperature = body.contains("temperature") ? get_field<double>(body, "temperature") : 1.0;
  if (temperature == 0.0) {
    r.sampling.mode = lm::DecodingMode::greedy;
  } else if (body.contains("top_k") && !body.at("top_k").is_null()) {
    r.sampling.mode = lm::DecodingMode::topk;
    r.sampling.top_k = get_field<std::uint32_t>(body, "top_k");
  } else if (body.contains("top_p") && !body.at("top_p").is_null()) {
    r.sampling.mode = lm::DecodingMode::nucleus;
    r.sampling.top_p = get_field<double>(body, "top_p");
  } else {
    throw ProtocolError("sampled request needs top_p or top_k");
  }
  try {
    r.validate();
  } catch (const ValidationError& e) {
    throw ProtocolError(e.what());
  }
  return r;
}

json completion_to_json(const lm::Completion& c) {
  json tokens = json::array();
  json token_logprobs = json::array();
  json top = json::array();
  for (const auto& t : c.tokens) {
    tokens.push_back(t.token);
    token_logprobs.push_back(t.logprob);
    json alts = json::array();
    for (const auto& a : t.top_alternatives) alts.push_back({{"token", a.token}, {"logprob", a.logprob}});
    top.push_back(std::move(alts));
  }
  return {{"text", c.text},
          {"finish_reason", c.finish_reason == lm::FinishReason::stop ? "stop" : "length"},
          {"logprobs", {{"tokens", tokens}, {"token_logprobs", token_logprobs}, {"top_logprobs", top}}}};
}

lm::Completion completion_from_json(const json& choice, const std::string& model_id) {
  lm::Completion c;
  c.model_id = model_id;
  c.text = get_field<std::string>(choice, "text");
  const auto finish = choice.contains("finish_reason") && !choice.at("finish_reason").is_null()
                          ? get_field<std::string>(choice, "finish_reason")
                          : std::string("length");
  if (finish == "stop") {
    c.finish_reason = lm::FinishReason::stop;
  } else if (finish == "length") {
    c.finish_reason = lm::FinishReason::length;
  } else {
    throw ProtocolError("unknown finish_reason '" + finish + "'");
  }
  if (!choice.contains("logprobs") || !choice.at("logprobs").is_object()) {
    throw ProtocolError("choice is missing logprobs");
  }
  const json& lp = choice.at("logprobs");
  const auto tokens = get_field<std::vector<std::string>>(lp, "tokens");
  const auto token_logprobs = get_field<std::vector<double>>(lp, "token_logprobs");
  if (tokens.size() != token_logprobs.size()) throw ProtocolError("tokens/token_logprobs length mismatch");
  json top = lp.contains("top_logprobs") ? lp.at("top_logprobs") : json::array();
  if (!top.is_null() && (!top.is_array() || (!top.empty() && top.size() != tokens.size()))) {
    throw ProtocolError("top_logprobs length mismatch");
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    lm::TokenLogprob t{tokens[i], token_logprobs[i], {}};
    if (top.is_array() && !top.empty()) t.top_alternatives = parse_alternatives(top[i]);
    c.tokens.push_back(std::move(t));
  }
  c.validate();
  return c;
}

json completions_to_json(const std::string& model_id, const std::vector<lm::Completion>& completions,
                         const lm::CompletionRequest& request) {
  json choices = json::array();
  for (std::size_t i = 0; i < completions.size(); ++i) {
    json choice = completion_to_json(completions[i]);
    choice["index"] = i;
    choices.push_back(std::move(choice));
  }
  return {{"model", model_id}, {"seed", request.sampling.seed}, {"choices", choices}};
}

std::vector<lm::Completion> completions_from_json(const json& body) {
  const auto model_id = get_field<std::string>(body, "model");
  if (!body.contains("choices") || !body.at("choices").is_array()) throw ProtocolError("missing choices array");
  std::vector<lm::Completion> out;
  for (const auto& choice : body.at("choices")) out.push_back(completion_from_json(choice, model_id));
  return out;
}

json sampling_to_json(const lm::SamplingSpec& s) {
  json j{{"mode", lm::to_string(s.mode)}, {"max_tokens", s.max_tokens}, {"seed", s.seed}};
  if (s.mode == lm::DecodingMode::nucleus) j["top_p"] = s.top_p;
  if (s.mode == lm::DecodingMode::topk) j["top_k"] = s.top_k;
  return j;
}

lm::SamplingSpec sampling_from_json(const json& j) {
  lm::SamplingSpec s;
  try {
    const auto mode = j.at("mode").get<std::string>();
    const auto max_tokens = j.at("max_tokens").get<std::uint32_t>();
    const auto seed = j.value("seed", std::uint64_t{0});
    if (mode == "greedy") {
      s = lm::SamplingSpec::greedy(max_tokens);
    } else if (mode == "nucleus") {
      s = lm::SamplingSpec::nucleus(j.at("top_p").get<double>(), max_tokens, seed);
    } else if (mode == "topk") {
      s = lm::SamplingSpec::topk(j.at("top_k").get<std::uint32_t>(), max_tokens, seed);
    } else {
      throw ValidationError("unknown decoding mode '" + mode + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed sampling spec: ") + e.what());
  }
  s.validate();
  return s;
}

}  // namespace nameprobe::wire
