#pragma once

// Checkpoint file: {"config", "params": {name: {"shape", "data"}}, "opt_state", "rng_state"}.
// Doubles are written in shortest round-trip decimal form, so a load
// reproduces every parameter bit for bit.

#include "json.hpp"  // nlohmann/json, vendored

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "ccl/errors.hpp"
#include "ccl/grounding_model.hpp"

namespace ccl {

struct Checkpoint {
  ModelParams params;
  std::optional<AdamState> opt_state;
  std::uint64_t rng_state = 0;
};

namespace detail {

inline nlohmann::json tensors_to_json(const TensorMap& tensors) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [name, m] : tensors) {
    nlohmann::json data = nlohmann::json::array();
    // Row-major flattening.
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    }
    out[name] = {{"shape", {m.rows(), m.cols()}}, {"data", std::move(data)}};
  }
  return out;
}

inline TensorMap tensors_from_json(const nlohmann::json& j) {
  TensorMap out;
  for (const auto& [name, entry] : j.items()) {
    const auto& shape = entry.at("shape");
    if (shape.size() != 2) throw ValidationError("tensor '" + name + "' must have a 2-d shape");
    const auto rows = shape[0].get<Eigen::Index>();
    const auto cols = shape[1].get<Eigen::Index>();
    const auto& data = entry.at("data");
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw ValidationError("tensor '" + name + "' data length does not match its shape");
    }
    Matrix m(rows, cols);
    std::size_t k = 0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[k++].get<double>();
    }
    out.emplace(name, std::move(m));
  }
  return out;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint& ckpt) {
  nlohmann::json j;
  j["config"] = ckpt.params.config;
  j["params"] = detail::tensors_to_json(ckpt.params.tensors);
  if (ckpt.opt_state) {
    j["opt_state"] = {{"step", ckpt.opt_state->step},
                      {"m", detail::tensors_to_json(ckpt.opt_state->m)},
                      {"v", detail::tensors_to_json(ckpt.opt_state->v)}};
  } else {
    j["opt_state"] = nullptr;
  }
  j["rng_state"] = ckpt.rng_state;
  return j;
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  Checkpoint ckpt;
  ckpt.params.config = j.at("config").get<ModelConfig>();
  ckpt.params.config.validate();
  ckpt.params.tensors = detail::tensors_from_json(j.at("params"));
  // Shapes must match what the config implies.
  const ModelParams reference = init_params(ckpt.params.config, 0);
  require_same_layout(reference.tensors, ckpt.params.tensors, "checkpoint");
  if (const auto bad = ckpt.params.first_non_finite()) {
    throw ValidationError("checkpoint: parameter '" + *bad + "' is not finite");
  }
  const auto& opt = j.at("opt_state");
  if (!opt.is_null()) {
    AdamState st;
    st.step = opt.at("step").get<long>();
    st.m = detail::tensors_from_json(opt.at("m"));
    st.v = detail::tensors_from_json(opt.at("v"));
    require_same_layout(reference.tensors, st.m, "checkpoint optimizer state");
    require_same_layout(reference.tensors, st.v, "checkpoint optimizer state");
    ckpt.opt_state = std::move(st);
  }
  ckpt.rng_state = j.value("rng_state", std::uint64_t{0});
  return ckpt;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot open " + path.string() + " for writing");
  out << checkpoint_to_json(ckpt).dump() << '\n';
  if (!out) throw ValidationError("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path.string());
  try {
    return checkpoint_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace ccl
