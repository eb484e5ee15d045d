// Copyright 2026 The StickyLab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// On-disk formats.
//
// A checkpoint is a directory holding manifest.json (architecture, training
// configuration, step and tensor inventory) and params.bin (little-endian
// float32 tensors concatenated in inventory order).
//
// Results tables are CSV with a fixed header; figure data files are CSV
// slices of a results table with no re-aggregation.

#include <algorithm>
#include <array>
#include <bit>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "stickylab/errors.hpp"
#include "stickylab/evaluator.hpp"
#include "stickylab/trainer.hpp"
#include "stickylab/transformer.hpp"

namespace stickylab::store {

namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kPayloadFile = "params.bin";

class PayloadLengthError : public DataError {
 public:
  using DataError::DataError;
};
class ManifestVersionError : public DataError {
 public:
  using DataError::DataError;
};
class ShapeMismatchError : public DataError {
 public:
  using DataError::DataError;
};
class DuplicateCellError : public DataError {
 public:
  using DataError::DataError;
};
class GapError : public DataError {
 public:
  GapError(const std::string& what, std::vector<std::pair<SwitchDirection, Cell>> missing)
      : DataError(what), missing_(std::move(missing)) {}
  [[nodiscard]] const std::vector<std::pair<SwitchDirection, Cell>>& missing() const { return missing_; }

 private:
  std::vector<std::pair<SwitchDirection, Cell>> missing_;
};

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointManifest {
  ModelConfig model;
  TrainConfig train;
  std::size_t step = 0;
};

struct Checkpoint {
  CheckpointManifest manifest;
  ParameterSet<float> params;
};

/// Stable identifier derived from configuration only, so it does not depend
/// on where a run was written.
inline std::string model_id(const CheckpointManifest& m) {
  std::ostringstream os;
  os << to_string(m.train.curriculum) << "-e" << m.model.embed_dim << "l" << m.model.n_layers << "h"
     << m.model.n_heads << "-T" << m.train.total_steps << "-s" << m.train.seed << "-step" << m.step;
  return os.str();
}

inline nlohmann::ordered_json manifest_to_json(const CheckpointManifest& m,
                                               const ParameterLayout& layout) {
  nlohmann::ordered_json j;
  j["version"] = kManifestVersion;
  j["model_id"] = model_id(m);
  j["embed_dim"] = m.model.embed_dim;
  j["n_layers"] = m.model.n_layers;
  j["n_heads"] = m.model.n_heads;
  j["max_tokens"] = m.model.max_tokens;
  j["mlp_ratio"] = m.model.mlp_ratio;
  j["curriculum"] = std::string(to_string(m.train.curriculum));
  j["total_steps"] = m.train.total_steps;
  j["seed"] = m.train.seed;
  j["step"] = m.step;
  j["learning_rate"] = m.train.learning_rate;
  j["batch_size"] = m.train.batch_size;
  j["points_start"] = m.train.points_start;
  j["points_max"] = m.train.points_max;
  j["points_increment"] = m.train.points_increment;
  j["points_interval"] = m.train.points_interval;
  j["checkpoint_every"] = m.train.checkpoint_every;
  j["payload"] = kPayloadFile;
  j["payload_dtype"] = "float32-le";
  auto inv = nlohmann::ordered_json::array();
  for (const auto& t : layout.tensors()) {
    nlohmann::ordered_json e;
    e["name"] = t.name;
    e["shape"] = {t.rows, t.cols};
    e["offset"] = t.offset;
    inv.push_back(std::move(e));
  }
  j["inventory"] = std::move(inv);
  return j;
}

inline CheckpointManifest manifest_from_json(const nlohmann::ordered_json& j) {
  try {
    if (!j.contains("version") || j.at("version").get<int>() != kManifestVersion) {
      throw ManifestVersionError("unsupported checkpoint manifest version " +
                                 (j.contains("version") ? j.at("version").dump() : std::string("<missing>")));
    }
    CheckpointManifest m;
    m.model.embed_dim = j.at("embed_dim").get<std::size_t>();
    m.model.n_layers = j.at("n_layers").get<std::size_t>();
    m.model.n_heads = j.at("n_heads").get<std::size_t>();
    m.model.max_tokens = j.at("max_tokens").get<std::size_t>();
    m.model.mlp_ratio = j.at("mlp_ratio").get<std::size_t>();
    m.train.curriculum = parse_curriculum(j.at("curriculum").get<std::string>());
    m.train.total_steps = j.at("total_steps").get<std::size_t>();
    m.train.seed = j.at("seed").get<std::uint64_t>();
    m.step = j.at("step").get<std::size_t>();
    m.train.learning_rate = j.at("learning_rate").get<double>();
    m.train.batch_size = j.at("batch_size").get<std::size_t>();
    m.train.points_start = j.at("points_start").get<std::size_t>();
    m.train.points_max = j.at("points_max").get<std::size_t>();
    m.train.points_increment = j.at("points_increment").get<std::size_t>();
    m.train.points_interval = j.at("points_interval").get<std::size_t>();
    m.train.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
    try {
      m.model.validate();
    } catch (const UsageError& e) {
      throw ShapeMismatchError(std::string("invalid architecture in manifest: ") + e.what());
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  } catch (const UsageError& e) {
    throw DataError(std::string("malformed checkpoint manifest: ") + e.what());
  }
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw DataError("write failed for " + path.string());
}

inline std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void save_checkpoint(const Checkpoint& ckpt, const fs::path& dir) {
  if (ckpt.params.config != ckpt.manifest.model) {
    throw ShapeMismatchError("checkpoint parameters do not match manifest architecture");
  }
  fs::create_directories(dir);
  write_text(dir / kManifestFile, manifest_to_json(ckpt.manifest, ckpt.params.layout).dump(2) + "\n");
  std::string bytes(ckpt.params.values.size() * 4, '\0');
  for (std::size_t i = 0; i < ckpt.params.values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(ckpt.params.values[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xffu);
  }
  write_text(dir / kPayloadFile, bytes);
}

inline Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::exists(dir / kManifestFile)) {
    throw DataError("no checkpoint manifest at " + (dir / kManifestFile).string());
  }
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(read_text(dir / kManifestFile));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("unparseable checkpoint manifest: " + std::string(e.what()));
  }
  Checkpoint ckpt;
  ckpt.manifest = manifest_from_json(j);
  ckpt.params = ParameterSet<float>(ckpt.manifest.model);

  const auto& expected = ckpt.params.layout.tensors();
  const auto& inv = j.at("inventory");
  if (!inv.is_array() || inv.size() != expected.size()) {
    throw ShapeMismatchError("manifest inventory lists " + std::to_string(inv.is_array() ? inv.size() : 0) +
                             " tensors, architecture needs " + std::to_string(expected.size()));
  }
  std::size_t declared = 0;
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = inv[i];
    TensorSpec got;
    try {
      got = {e.at("name").get<std::string>(), e.at("shape").at(0).get<std::size_t>(),
             e.at("shape").at(1).get<std::size_t>(), e.at("offset").get<std::size_t>()};
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("malformed inventory entry " + std::to_string(i) + ": " + ex.what());
    }
    if (!(got == expected[i])) {
      throw ShapeMismatchError("inventory entry " + std::to_string(i) + " (" + got.name +
                               ") does not match architecture tensor " + expected[i].name);
    }
    declared += got.size();
  }

  const std::string bytes = read_text(dir / kPayloadFile);
  if (bytes.size() != declared * 4) {
    throw PayloadLengthError("payload has " + std::to_string(bytes.size()) + " bytes, inventory needs " +
                             std::to_string(declared * 4));
  }
  for (std::size_t i = 0; i < declared; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) {
      u |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    }
    ckpt.params.values[i] = std::bit_cast<float>(u);
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Results tables

inline constexpr const char* kResultsHeader =
    "model_id,curriculum,direction,n_pre,n_post,trials,batch,mean_mse,sd,sem,seed";

struct ResultRow {
  std::string model_id;
  std::string curriculum;
  ConfigResult result;
  std::uint64_t seed = 0;
};

struct ResultsTable {
  std::vector<ResultRow> rows;

  [[nodiscard]] const ResultRow* find(SwitchDirection d, Cell c) const {
    for (const auto& r : rows) {
      if (r.result.direction == d && r.result.cell() == c) return &r;
    }
    return nullptr;
  }
};

inline std::string format_real(double v) {
  std::array<char, 40> buf{};
  std::snprintf(buf.data(), buf.size(), "%.17g", v);
  return buf.data();
}

inline std::string results_to_csv(const ResultsTable& table) {
  std::set<std::pair<int, Cell>> seen;
  std::string out = std::string(kResultsHeader) + "\n";
  for (const auto& row : table.rows) {
    const auto& r = row.result;
    if (!seen.insert({static_cast<int>(r.direction), r.cell()}).second) {
      throw DuplicateCellError("duplicate results row for " + std::string(to_string(r.direction)) + " (" +
                               std::to_string(r.n_pre) + ", " + std::to_string(r.n_post) + ")");
    }
    if (row.model_id.find_first_of(",\n") != std::string::npos ||
        row.curriculum.find_first_of(",\n") != std::string::npos) {
      throw DataError("model_id and curriculum must not contain commas or newlines");
    }
    out += row.model_id + "," + row.curriculum + "," + std::string(to_string(r.direction)) + "," +
           std::to_string(r.n_pre) + "," + std::to_string(r.n_post) + "," + std::to_string(r.trials) + "," +
           std::to_string(r.batch) + "," + format_real(r.mean_mse) + "," + format_real(r.sd) + "," +
           format_real(r.sem) + "," + std::to_string(row.seed) + "\n";
  }
  return out;
}

inline void write_results(const ResultsTable& table, const fs::path& path) {
  const std::string text = results_to_csv(table);  // validates before touching the file
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_text(path, text);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(cur);
  return fields;
}

inline double parse_real(const std::string& s, std::size_t line) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) {
    throw DataError("line " + std::to_string(line) + ": bad real '" + s + "'");
  }
  return v;
}

inline std::uint64_t parse_count(const std::string& s, std::size_t line) {
  errno = 0;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || s[0] == '-' || end != s.c_str() + s.size() || errno == ERANGE) {
    throw DataError("line " + std::to_string(line) + ": bad count '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline ResultsTable results_from_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || (line != kResultsHeader && line != std::string(kResultsHeader) + "\r")) {
    throw DataError("results file does not start with the expected header");
  }
  ResultsTable table;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    const auto f = detail::split_csv_line(line);
    if (f.size() != 11) throw DataError("line " + std::to_string(lineno) + ": expected 11 fields");
    ResultRow row;
    row.model_id = f[0];
    row.curriculum = f[1];
    auto& r = row.result;
    try {
      r.direction = parse_direction(f[2]);
    } catch (const UsageError& e) {
      throw DataError("line " + std::to_string(lineno) + ": " + e.what());
    }
    r.n_pre = detail::parse_count(f[3], lineno);
    r.n_post = detail::parse_count(f[4], lineno);
    r.trials = detail::parse_count(f[5], lineno);
    r.batch = detail::parse_count(f[6], lineno);
    r.mean_mse = detail::parse_real(f[7], lineno);
    r.sd = detail::parse_real(f[8], lineno);
    r.sem = detail::parse_real(f[9], lineno);
    r.insufficient_trials = r.trials < 2;
    row.seed = detail::parse_count(f[10], lineno);
    if (table.find(r.direction, r.cell()) != nullptr) {
      throw DuplicateCellError("line " + std::to_string(lineno) + ": duplicate cell");
    }
    table.rows.push_back(std::move(row));
  }
  return table;
}

inline ResultsTable read_results(const fs::path& path) { return results_from_csv(read_text(path)); }

// ---------------------------------------------------------------------------
// Figure data

enum class FigureKind { Surface, Recovery, Stickiness, Direction };

inline std::string_view to_string(FigureKind k) {
  switch (k) {
    case FigureKind::Surface: return "surface";
    case FigureKind::Recovery: return "recovery";
    case FigureKind::Stickiness: return "stickiness";
    case FigureKind::Direction: return "direction";
  }
  return "?";
}

inline FigureKind parse_figure(std::string_view s) {
  if (s == "surface") return FigureKind::Surface;
  if (s == "recovery") return FigureKind::Recovery;
  if (s == "stickiness") return FigureKind::Stickiness;
  if (s == "direction") return FigureKind::Direction;
  throw UsageError("unknown figure '" + std::string(s) +
                   "' (expected surface, recovery, stickiness or direction)");
}

struct FigureRequest {
  FigureKind kind = FigureKind::Surface;
  std::optional<std::size_t> fix_pre;   // recovery: which n_pre series; direction: filter
  std::optional<std::size_t> fix_post;  // stickiness: which n_post series; direction: filter
};

/// One CSV file's worth of figure data.
struct FigureData {
  std::string name;  // file-name suffix, e.g. "recovery_pre20"
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  [[nodiscard]] std::string to_csv() const {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
    out += "\n";
    for (const auto& r : rows) {
      for (std::size_t i = 0; i < r.size(); ++i) out += (i ? "," : "") + r[i];
      out += "\n";
    }
    return out;
  }
};

/// Sorted union of the n_pre and n_post values a table covers for `d`.
inline std::vector<std::size_t> grid_counts(const ResultsTable& table, SwitchDirection d) {
  std::set<std::size_t> s;
  for (const auto& r : table.rows) {
    if (r.result.direction != d) continue;
    s.insert(r.result.n_pre);
    s.insert(r.result.n_post);
  }
  return {s.begin(), s.end()};
}

inline std::vector<SwitchDirection> directions_in(const ResultsTable& table) {
  std::vector<SwitchDirection> out;
  for (auto d : {SwitchDirection::LinearToQuadratic, SwitchDirection::QuadraticToLinear}) {
    for (const auto& r : table.rows) {
      if (r.result.direction == d) {
        out.push_back(d);
        break;
      }
    }
  }
  return out;
}

namespace detail {

inline std::string describe(const std::vector<std::pair<SwitchDirection, Cell>>& missing) {
  std::string s;
  for (const auto& [d, c] : missing) {
    s += " " + std::string(to_string(d)) + "(" + std::to_string(c.n_pre) + "," + std::to_string(c.n_post) + ")";
  }
  return s;
}

/// Rows for the requested cells in order; throws GapError listing every
/// absent cell.
inline std::vector<const ResultRow*> collect(const ResultsTable& table, SwitchDirection d,
                                             const std::vector<Cell>& cells, const std::string& what) {
  std::vector<const ResultRow*> out;
  std::vector<std::pair<SwitchDirection, Cell>> missing;
  for (const auto& c : cells) {
    const auto* r = table.find(d, c);
    if (r == nullptr) {
      missing.emplace_back(d, c);
    } else {
      out.push_back(r);
    }
  }
  if (!missing.empty()) {
    std::string message = what + ": missing cells" + describe(missing);
    throw GapError(message, std::move(missing));
  }
  return out;
}

inline std::vector<std::string> cell_fields(const ResultRow& r) {
  return {std::string(to_string(r.result.direction)), std::to_string(r.result.n_pre),
          std::to_string(r.result.n_post), format_real(r.result.mean_mse), format_real(r.result.sem)};
}

}  // namespace detail

/// Surface, recovery or stickiness data for every direction in `table`.
inline std::vector<FigureData> emit_figure_data(const ResultsTable& table, const FigureRequest& req) {
  if (req.kind == FigureKind::Direction) {
    throw UsageError("direction figures pair two tables; use emit_direction_data");
  }
  std::vector<FigureData> out;
  const std::vector<std::string> header{"direction", "n_pre", "n_post", "mean_mse", "sem"};
  for (auto d : directions_in(table)) {
    const auto counts = grid_counts(table, d);
    const std::string dname(to_string(d));
    auto series = [&](std::optional<std::size_t> fix, bool fix_is_pre) {
      std::vector<std::size_t> fixed = fix ? std::vector<std::size_t>{*fix} : counts;
      for (auto v : fixed) {
        std::vector<Cell> cells;
        for (auto other : counts) {
          const Cell c = fix_is_pre ? Cell{v, other} : Cell{other, v};
          if (c.n_pre + c.n_post <= kMaxContext) cells.push_back(c);
        }
        if (cells.empty()) cells.push_back(fix_is_pre ? Cell{v, 0} : Cell{0, v});
        FigureData fd{dname + "_" + std::string(to_string(req.kind)) + (fix_is_pre ? "_pre" : "_post") +
                          std::to_string(v),
                      header,
                      {}};
        for (const auto* r : detail::collect(table, d, cells, fd.name)) fd.rows.push_back(detail::cell_fields(*r));
        out.push_back(std::move(fd));
      }
    };
    switch (req.kind) {
      case FigureKind::Surface: {
        std::vector<Cell> cells;
        for (auto a : counts) {
          for (auto b : counts) {
            if (a + b <= kMaxContext) cells.push_back({a, b});
          }
        }
        FigureData fd{dname + "_surface", header, {}};
        for (const auto* r : detail::collect(table, d, cells, fd.name)) fd.rows.push_back(detail::cell_fields(*r));
        out.push_back(std::move(fd));
        break;
      }
      case FigureKind::Recovery:
        series(req.fix_pre, true);
        break;
      case FigureKind::Stickiness:
        series(req.fix_post, false);
        break;
      case FigureKind::Direction:
        break;
    }
  }
  return out;
}

/// Paired series for two tables (typically one per direction) at matched
/// (n_pre, n_post), optionally restricted by fix_pre / fix_post.
inline FigureData emit_direction_data(const ResultsTable& a, const ResultsTable& b,
                                      const FigureRequest& req = {FigureKind::Direction, {}, {}}) {
  const auto da = directions_in(a);
  const auto db = directions_in(b);
  if (da.size() != 1 || db.size() != 1) {
    throw DataError("direction comparison needs each table to hold exactly one direction");
  }
  auto keep = [&](const Cell& c) {
    return (!req.fix_pre || c.n_pre == *req.fix_pre) && (!req.fix_post || c.n_post == *req.fix_post);
  };
  std::vector<Cell> cells_a, cells_b;
  for (const auto& r : a.rows) {
    if (keep(r.result.cell())) cells_a.push_back(r.result.cell());
  }
  for (const auto& r : b.rows) {
    if (keep(r.result.cell())) cells_b.push_back(r.result.cell());
  }
  std::sort(cells_a.begin(), cells_a.end());
  std::sort(cells_b.begin(), cells_b.end());
  std::vector<std::pair<SwitchDirection, Cell>> missing;
  for (const auto& c : cells_a) {
    if (!std::binary_search(cells_b.begin(), cells_b.end(), c)) missing.emplace_back(db[0], c);
  }
  for (const auto& c : cells_b) {
    if (!std::binary_search(cells_a.begin(), cells_a.end(), c)) missing.emplace_back(da[0], c);
  }
  if (!missing.empty()) {
    std::string message = "direction comparison: unmatched cells" + detail::describe(missing);
    throw GapError(message, std::move(missing));
  }
  if (cells_a.empty()) throw GapError("direction comparison: no cells match the requested slice", {});
  FigureData fd{"direction_" + std::string(to_string(da[0])) + "_vs_" + std::string(to_string(db[0])),
                {"n_pre", "n_post", "mean_mse_a", "sem_a", "mean_mse_b", "sem_b"},
                {}};
  for (const auto& c : cells_a) {
    const auto* ra = a.find(da[0], c);
    const auto* rb = b.find(db[0], c);
    fd.rows.push_back({std::to_string(c.n_pre), std::to_string(c.n_post), format_real(ra->result.mean_mse),
                       format_real(ra->result.sem), format_real(rb->result.mean_mse), format_real(rb->result.sem)});
  }
  return fd;
}

inline fs::path write_figure(const FigureData& fd, const fs::path& dir, const std::string& stem) {
  fs::create_directories(dir);
  const fs::path path = dir / (stem + "_" + fd.name + ".csv");
  write_text(path, fd.to_csv());
  return path;
}

// ---------------------------------------------------------------------------
// Loss traces

inline std::string loss_trace_to_csv(const std::vector<StepRecord>& trace) {
  std::string out = "step,class,points,loss\n";
  for (const auto& r : trace) {
    out += std::to_string(r.step) + "," + std::string(to_string(r.function_class)) + "," +
           std::to_string(r.points) + "," + format_real(r.loss) + "\n";
  }
  return out;
}

}  // namespace stickylab::store
