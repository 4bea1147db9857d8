// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>

#include "mmt/data/synthetic.hpp"
#include "mmt/model.hpp"
#include "mmt/training.hpp"

namespace mmt {

/// Training configuration documents.
///
/// A JSON object whose keys are TrainConfig field names (see the README for
/// the list). An optional "preset" key ("paper" or "tiny") picks the starting
/// values; it defaults to "paper". Unknown keys and ill-typed values raise
/// ConfigError naming the key.
TrainConfig train_config_from_json(std::string_view json);
std::string train_config_to_json(const TrainConfig& cfg);

/// Applies one KEY=VALUE override. VALUE is read as JSON when it parses
/// (numbers, true/false) and as a plain string otherwise. Besides field names
/// the key "size" accepts "<layers>x<heads>", e.g. "2x2".
void apply_override(TrainConfig& cfg, std::string_view key, std::string_view value);
/// Splits "KEY=VALUE" and applies it.
void apply_override(TrainConfig& cfg, std::string_view assignment);

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(std::string_view json);

/// Same conventions; missing keys keep SyntheticSpec defaults.
data::SyntheticSpec synthetic_spec_from_json(std::string_view json);
std::string synthetic_spec_to_json(const data::SyntheticSpec& spec);

}  // namespace mmt
