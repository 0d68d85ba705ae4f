#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "rnmt/model.hpp"

namespace rnmt {

// Self-describing binary container: model config, named model tensors, an
// optional discriminator section and an optional optimizer section. Tensors
// are raw little-endian doubles.
namespace ckpt_detail {

constexpr char kMagic[8] = {'R', 'N', 'M', 'T', 'C', 'K', '1', '\n'};

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_f64(std::ostream& os, double v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
inline void write_str(std::ostream& os, const std::string& s) {
  write_u64(os, s.size());
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
inline void write_mat(std::ostream& os, const ag::Mat& m) {
  write_u64(os, static_cast<std::uint64_t>(m.rows()));
  write_u64(os, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) write_f64(os, m(i, j));
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}
inline double read_f64(std::istream& is) {
  double v;
  is.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return v;
}
inline std::string read_str(std::istream& is) {
  std::uint64_t n = read_u64(is);
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  if (!is) throw std::runtime_error("checkpoint truncated");
  return s;
}
inline ag::Mat read_mat(std::istream& is) {
  std::uint64_t rows = read_u64(is), cols = read_u64(is);
  ag::Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::uint64_t i = 0; i < rows; ++i)
    for (std::uint64_t j = 0; j < cols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          read_f64(is);
  return m;
}

inline void write_named(std::ostream& os,
                        const std::vector<std::pair<std::string, ag::Mat>>& ts) {
  write_u64(os, ts.size());
  for (const auto& [name, m] : ts) {
    write_str(os, name);
    write_mat(os, m);
  }
}
inline std::vector<std::pair<std::string, ag::Mat>> read_named(std::istream& is) {
  std::uint64_t n = read_u64(is);
  std::vector<std::pair<std::string, ag::Mat>> out;
  out.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    std::string name = read_str(is);
    out.emplace_back(std::move(name), read_mat(is));
  }
  return out;
}

}  // namespace ckpt_detail

struct OptimizerState {
  std::vector<std::pair<std::string, ag::Mat>> first_moment;
  std::vector<std::pair<std::string, ag::Mat>> second_moment;
};

struct Checkpoint {
  ModelConfig config;
  std::uint64_t step = 0;
  std::vector<std::pair<std::string, ag::Mat>> model_tensors;
  std::vector<std::pair<std::string, ag::Mat>> dis_tensors;  // may be empty
  bool has_optimizer = false;
  OptimizerState optimizer;

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    os.write(ckpt_detail::kMagic, sizeof(ckpt_detail::kMagic));
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(config.num_layers));
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(config.d_model));
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(config.ffn_size));
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(config.num_heads));
    ckpt_detail::write_f64(os, config.dropout);
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(config.max_positions));
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(config.src_vocab));
    ckpt_detail::write_u64(os, static_cast<std::uint64_t>(config.tgt_vocab));
    ckpt_detail::write_f64(os, config.label_smoothing);
    ckpt_detail::write_u64(os, step);
    ckpt_detail::write_named(os, model_tensors);
    ckpt_detail::write_named(os, dis_tensors);
    ckpt_detail::write_u64(os, has_optimizer ? 1 : 0);
    if (has_optimizer) {
      ckpt_detail::write_named(os, optimizer.first_moment);
      ckpt_detail::write_named(os, optimizer.second_moment);
    }
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::string(magic, 8) != std::string(ckpt_detail::kMagic, 8))
      throw std::runtime_error("not a checkpoint file: " + path);
    Checkpoint c;
    c.config.num_layers = static_cast<int>(ckpt_detail::read_u64(is));
    c.config.d_model = static_cast<int>(ckpt_detail::read_u64(is));
    c.config.ffn_size = static_cast<int>(ckpt_detail::read_u64(is));
    c.config.num_heads = static_cast<int>(ckpt_detail::read_u64(is));
    c.config.dropout = ckpt_detail::read_f64(is);
    c.config.max_positions = static_cast<int>(ckpt_detail::read_u64(is));
    c.config.src_vocab = static_cast<int>(ckpt_detail::read_u64(is));
    c.config.tgt_vocab = static_cast<int>(ckpt_detail::read_u64(is));
    c.config.label_smoothing = ckpt_detail::read_f64(is);
    c.step = ckpt_detail::read_u64(is);
    c.model_tensors = ckpt_detail::read_named(is);
    c.dis_tensors = ckpt_detail::read_named(is);
    c.has_optimizer = ckpt_detail::read_u64(is) != 0;
    if (c.has_optimizer) {
      c.optimizer.first_moment = ckpt_detail::read_named(is);
      c.optimizer.second_moment = ckpt_detail::read_named(is);
    }
    return c;
  }

  void strip_discriminator() { dis_tensors.clear(); }
};

inline std::vector<std::pair<std::string, ag::Mat>> snapshot(
    const ParamStore& store) {
  std::vector<std::pair<std::string, ag::Mat>> out;
  for (const auto& [name, var] : store.items())
    out.emplace_back(name, var->value);
  return out;
}

// Loads tensors by name; every store entry must be present in the snapshot.
inline void restore(ParamStore& store,
                    const std::vector<std::pair<std::string, ag::Mat>>& ts) {
  std::map<std::string, const ag::Mat*> by_name;
  for (const auto& [name, m] : ts) by_name[name] = &m;
  for (auto& [name, var] : store.items()) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint missing tensor: " + name);
    if (it->second->rows() != var->value.rows() ||
        it->second->cols() != var->value.cols())
      throw std::runtime_error("checkpoint tensor shape mismatch: " + name);
    const_cast<ag::Var&>(var)->value = *it->second;
  }
}

}  // namespace rnmt
