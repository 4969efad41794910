#pragma once

#include <fstream>
#include <optional>
#include <string>

#include <json.hpp>

#include "rcot/digest.hpp"
#include "rcot/errors.hpp"
#include "rcot/policy.hpp"

namespace rcot {

inline constexpr const char* kCheckpointFormatVersion = "rcot.ckpt.v1";

namespace detail {

inline nlohmann::json matrix_to_json(const Mat& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json vector_to_json(const Vec& v) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Mat matrix_from_json(const nlohmann::json& j, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows) {
    throw ArtifactError(std::string("checkpoint: bad shape for ") + name);
  }
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j.at(static_cast<std::size_t>(r));
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ArtifactError(std::string("checkpoint: bad shape for ") + name);
    }
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
  }
  if (!m.allFinite()) throw ArtifactError(std::string("checkpoint: non-finite entries in ") + name);
  return m;
}

inline Vec vector_from_json(const nlohmann::json& j, Eigen::Index size, const char* name) {
  if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != size) {
    throw ArtifactError(std::string("checkpoint: bad shape for ") + name);
  }
  Vec v(size);
  for (Eigen::Index i = 0; i < size; ++i) v[i] = j.at(static_cast<std::size_t>(i)).get<double>();
  if (!v.allFinite()) throw ArtifactError(std::string("checkpoint: non-finite entries in ") + name);
  return v;
}

inline nlohmann::json checkpoint_payload(const PolicyParams& base, const AdapterParams* adapter, bool merged) {
  nlohmann::json payload;
  payload["base"] = {{"W_x", matrix_to_json(base.w_x)},
                     {"W_s", matrix_to_json(base.w_s)},
                     {"b", vector_to_json(base.b)},
                     {"U", matrix_to_json(base.u)}};
  if (adapter != nullptr) {
    payload["adapter"] = {{"A_U", matrix_to_json(adapter->a_u)},
                          {"B_U", matrix_to_json(adapter->b_u)},
                          {"A_x", matrix_to_json(adapter->a_x)},
                          {"B_x", matrix_to_json(adapter->b_x)}};
  } else {
    payload["adapter"] = nullptr;
  }
  payload["merged"] = merged;
  return payload;
}

}  // namespace detail

// Provenance fingerprint of the exact serialized parameters.
inline std::string checkpoint_digest(const PolicyParams& base, const AdapterParams* adapter, bool merged) {
  return digest_hex(detail::checkpoint_payload(base, adapter, merged).dump());
}

struct Checkpoint {
  std::uint64_t seed = 0;
  PolicyParams base;
  std::optional<AdapterParams> adapter;
  bool merged = false;
  nlohmann::json config = nlohmann::json::object();  // resolved experiment config
  nlohmann::json inputs = nlohmann::json::object();  // digests of input artifacts

  std::string digest() const { return checkpoint_digest(base, adapter ? &*adapter : nullptr, merged); }
};

// Reals are serialized as shortest round-trip decimals, so write/read is
// bit-exact; the "encoding" field records that.
inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json j = detail::checkpoint_payload(ckpt.base, ckpt.adapter ? &*ckpt.adapter : nullptr, ckpt.merged);
  j["format_version"] = kCheckpointFormatVersion;
  j["encoding"] = "decimal-shortest-roundtrip";
  j["seed"] = ckpt.seed;
  j["dims"] = {{"hidden", kHiddenDim},
               {"features", kFeatureDim},
               {"actions", kNumActions},
               {"history", kHistorySlots},
               {"rank", ckpt.adapter ? ckpt.adapter->rank() : 0}};
  j["digest"] = ckpt.digest();
  j["config"] = ckpt.config;
  j["inputs"] = ckpt.inputs;
  return j.dump(2) + "\n";
}

inline void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream file(path, std::ios::binary);
  if (!file) throw ArtifactError("cannot open '" + path + "' for writing");
  file << serialize_checkpoint(ckpt);
  if (!file) throw ArtifactError("failed writing '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw ArtifactError("checkpoint '" + path + "' does not exist or is unreadable");
  nlohmann::json j;
  try {
    file >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("checkpoint '" + path + "': " + e.what());
  }
  if (!j.contains("format_version") || j.at("format_version") != kCheckpointFormatVersion) {
    throw ArtifactError("checkpoint '" + path + "': missing or unsupported format_version");
  }

  Checkpoint ckpt;
  try {
    ckpt.seed = j.at("seed").get<std::uint64_t>();
    const auto& dims = j.at("dims");
    if (dims.at("hidden") != kHiddenDim || dims.at("features") != kFeatureDim ||
        dims.at("actions") != kNumActions || dims.at("history") != kHistorySlots) {
      throw ArtifactError("checkpoint '" + path + "': dimension mismatch");
    }
    const auto& base = j.at("base");
    ckpt.base.w_x = detail::matrix_from_json(base.at("W_x"), kHiddenDim, kFeatureDim, "W_x");
    ckpt.base.w_s = detail::matrix_from_json(base.at("W_s"), kHiddenDim, kHistorySlots, "W_s");
    ckpt.base.b = detail::vector_from_json(base.at("b"), kHiddenDim, "b");
    ckpt.base.u = detail::matrix_from_json(base.at("U"), kNumActions, kHiddenDim, "U");
    if (!j.at("adapter").is_null()) {
      const int rank = dims.at("rank").get<int>();
      if (rank < 1) throw ArtifactError("checkpoint '" + path + "': adapter present but rank < 1");
      AdapterParams a;
      const auto& adapter = j.at("adapter");
      a.a_u = detail::matrix_from_json(adapter.at("A_U"), kNumActions, rank, "A_U");
      a.b_u = detail::matrix_from_json(adapter.at("B_U"), kHiddenDim, rank, "B_U");
      a.a_x = detail::matrix_from_json(adapter.at("A_x"), kHiddenDim, rank, "A_x");
      a.b_x = detail::matrix_from_json(adapter.at("B_x"), kFeatureDim, rank, "B_x");
      ckpt.adapter = std::move(a);
    }
    ckpt.merged = j.at("merged").get<bool>();
    if (j.contains("config")) ckpt.config = j.at("config");
    if (j.contains("inputs")) ckpt.inputs = j.at("inputs");
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactError("checkpoint '" + path + "': " + e.what());
  }

  const std::string expected = j.value("digest", std::string());
  if (expected.empty()) throw ArtifactError("checkpoint '" + path + "': missing digest");
  if (ckpt.digest() != expected) {
    throw ArtifactError("checkpoint '" + path + "': digest mismatch (file corrupted or edited)");
  }
  return ckpt;
}

enum class CheckpointDirection { Write, Read };

inline Checkpoint checkpoint_io(const std::string& path, const Checkpoint& ckpt, CheckpointDirection direction) {
  if (direction == CheckpointDirection::Write) {
    write_checkpoint(path, ckpt);
    return ckpt;
  }
  return read_checkpoint(path);
}

}  // namespace rcot
