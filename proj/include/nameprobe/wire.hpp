#pragma once

// JSON wire formats shared by the HTTP clients and the in-repo reference
// servers. Field names are the contract; see README "Wire protocols".

#include <string>
#include <vector>

#include "json.hpp"

#include "nameprobe/lm_client.hpp"

namespace nameprobe::wire {

using nlohmann::json;

// POST /v1/completions request body.
json completion_request_to_json(const std::string& model_id, const lm::CompletionRequest& request);
// Server side: parse and validate a request body. Throws ProtocolError.
lm::CompletionRequest completion_request_from_json(const json& body);

// Response body: {"model", "seed"?, "choices": [...]}.
json completions_to_json(const std::string& model_id, const std::vector<lm::Completion>& completions,
                         const lm::CompletionRequest& request);
// Throws ProtocolError on any structural defect.
std::vector<lm::Completion> completions_from_json(const json& body);

// Cache blobs reuse the choice encoding.
json completion_to_json(const lm::Completion& c);
lm::Completion completion_from_json(const json& choice, const std::string& model_id);

// {"mode", "top_p"?, "top_k"?, "max_tokens", "seed"} as stored in corpora
// and manifests. from_json validates and throws ValidationError.
json sampling_to_json(const lm::SamplingSpec& s);
lm::SamplingSpec sampling_from_json(const json& j);

}  // namespace nameprobe::wire
