#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "difd/corpus/vocab.hpp"
#include "difd/model/model.hpp"

namespace difd::model {

/// Everything needed to run a trained model: architecture, vocabulary and
/// weights. `info` carries free-form run details (variant, seed, ...).
struct Model {
  ModelConfig config;
  corpus::Vocabulary vocab;
  nd::ParamStore store;
  nlohmann::json info = nlohmann::json::object();
};

inline nlohmann::json model_metadata(const Model& m) {
  nlohmann::json meta;
  meta["model"] = to_json(m.config);
  meta["vocab"] = m.vocab.words();
  meta["info"] = m.info;
  return meta;
}

/// Checks that the stored parameters are exactly those the configuration
/// implies, with matching shapes.
inline void check_model(const Model& m) {
  nd::ParamStore expected;
  std::mt19937_64 rng(0);
  init_model(expected, m.config, nd::Tensor(nd::Shape{m.vocab.size(), m.config.d_e}), rng);
  if (expected.size() != m.store.size()) {
    fail(ErrorKind::data, "checkpoint holds " + std::to_string(m.store.size()) + " parameters, configuration implies " +
                              std::to_string(expected.size()));
  }
  for (const auto& p : expected) {
    if (!m.store.contains(p.name)) fail(ErrorKind::data, "checkpoint lacks parameter '" + p.name + "'");
    const auto& got = m.store.at(p.name);
    if (got.value.shape != p.value.shape) {
      fail(ErrorKind::data, "checkpoint parameter '" + p.name + "' has shape " + nd::to_string(got.value.shape) +
                                ", configuration implies " + nd::to_string(p.value.shape));
    }
    if (got.partition != p.partition) fail(ErrorKind::data, "checkpoint parameter '" + p.name + "' has the wrong partition");
  }
}

inline void save_model(const std::filesystem::path& path, const Model& m) { nd::save_checkpoint(path, m.store, model_metadata(m)); }

inline Model load_model(const std::filesystem::path& path) {
  auto ck = nd::load_checkpoint(path);
  Model m;
  if (!ck.metadata.contains("model") || !ck.metadata.contains("vocab")) {
    fail(ErrorKind::data, path.string() + ": checkpoint has no model description");
  }
  m.config = model_config_from_json(ck.metadata["model"]);
  try {
    m.vocab = corpus::Vocabulary::from_words(ck.metadata["vocab"].get<std::vector<std::string>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::data, path.string() + ": bad vocabulary: " + e.what());
  }
  m.info = ck.metadata.value("info", nlohmann::json::object());
  m.store = std::move(ck.store);
  check_model(m);
  return m;
}

}  // namespace difd::model
