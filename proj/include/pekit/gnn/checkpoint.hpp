#pragma once

// Model checkpoints: one JSON document holding the structure manifest (set
// descriptors, widths, layer count, attention placement) next to the full
// parameter blob, base64-encoded in the shared binary format.  The manifest
// alone is enough to rebuild the model object; the blob restores its exact
// parameter values, so a reloaded checkpoint reproduces the original model's
// outputs bit for bit.  Files are written to a sibling temporary path and
// renamed into place so a crash never leaves a truncated checkpoint behind.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pekit/gnn/model.hpp"
#include "pekit/serialize.hpp"

namespace pekit {

inline constexpr int kGnnCheckpointVersion = 1;

inline nlohmann::json checkpoint_manifest(const GnnModel& model) {
  nlohmann::json doc;
  doc["format"] = "pekit-gnn-checkpoint";
  doc["version"] = kGnnCheckpointVersion;
  doc["widths"] = {{"input", model.widths.input},
                   {"hidden", model.widths.hidden},
                   {"ffn_hidden", model.widths.ffn_hidden}};
  doc["layers"] = model.layer_count;
  doc["attention_level"] = model.attention_level;
  nlohmann::json sets = nlohmann::json::array();
  for (const auto& d : model.descriptors) {
    sets.push_back({{"name", d.name},
                    {"kind", set_kind_name(d.kind)},
                    {"subset_count", d.subset_count},
                    {"subset_size", d.subset_size},
                    {"joint_group", d.joint_group},
                    {"interference_present", d.interference_present},
                    {"interference_in_parameters", d.interference_in_parameters}});
  }
  doc["sets"] = sets;
  doc["params"] = base64_encode(serialize_params(model.params));
  return doc;
}

inline void save_checkpoint(const std::string& path, const GnnModel& model) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
    out << checkpoint_manifest(model).dump(2) << "\n";
    if (!out) throw std::runtime_error("save_checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("save_checkpoint: rename to " + path + " failed");
  }
}

inline GnnModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  nlohmann::json doc;
  in >> doc;
  if (doc.value("format", "") != "pekit-gnn-checkpoint") {
    throw std::runtime_error("load_checkpoint: " + path + " is not a model checkpoint");
  }
  if (doc.value("version", 0) != kGnnCheckpointVersion) {
    throw std::runtime_error("load_checkpoint: unsupported checkpoint version");
  }

  GnnModel model;
  model.widths.input = doc.at("widths").at("input").get<std::int64_t>();
  model.widths.hidden = doc.at("widths").at("hidden").get<std::int64_t>();
  model.widths.ffn_hidden = doc.at("widths").at("ffn_hidden").get<std::int64_t>();
  model.layer_count = doc.at("layers").get<std::int64_t>();
  model.attention_level = doc.at("attention_level").get<std::int64_t>();
  for (const auto& s : doc.at("sets")) {
    SetDescriptor d;
    d.name = s.at("name").get<std::string>();
    d.kind = set_kind_from_name(s.at("kind").get<std::string>());
    d.subset_count = s.at("subset_count").get<std::int64_t>();
    d.subset_size = s.at("subset_size").get<std::int64_t>();
    d.joint_group = s.at("joint_group").get<int>();
    d.interference_present = s.at("interference_present").get<bool>();
    d.interference_in_parameters = s.at("interference_in_parameters").get<bool>();
    model.descriptors.push_back(std::move(d));
  }

  // Joint pair: recovered from the descriptor flags, mirroring the builder.
  {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < model.descriptors.size(); ++i) {
      if (model.descriptors[i].joint_group != 0) members.push_back(i);
    }
    if (members.size() == 2) model.joint_pair = {{members[0], members[1]}};
    else if (!members.empty()) {
      throw std::runtime_error("load_checkpoint: malformed joint group");
    }
  }

  model.params = deserialize_params(base64_decode(doc.at("params").get<std::string>()));
  return model;
}

}  // namespace pekit
