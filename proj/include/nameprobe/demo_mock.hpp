#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nameprobe/lm_client.hpp"
#include "nameprobe/namebank.hpp"
#include "nameprobe/sentiment.hpp"
#include "nameprobe/swap.hpp"

namespace nameprobe::demo {

// Offline stand-ins used by `--mock`. Everything is a pure function of the
// bank, so two mock runs over one config see identical models.

// Completion model: grounding prompts continue with the entity's surname for
// a hash-selected subset per prompt kind; "<name> is a" draws from a shared
// vocabulary mixed with name-specific words, planted lexicon words and, for
// media names, the surname.
std::shared_ptr<lm::MockModel> demo_model(const NameBank& bank, std::string model_id = "demo-mock");

// Role-consistent QA that fixates on the most frequent swap-flagged media
// name of each gender. Reports {"task": "demo"} as metadata.
std::shared_ptr<swap::QaModel> demo_qa(const NameBank& bank, const std::vector<swap::SwapTemplate>& templates);

// Lexicon scorer over the planted sentiment words.
std::shared_ptr<sentiment::SentimentProvider> demo_sentiment();

}  // namespace nameprobe::demo
