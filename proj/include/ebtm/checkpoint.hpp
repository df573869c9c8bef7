#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ebtm/dbm.hpp"
#include "ebtm/digest.hpp"
#include "ebtm/errors.hpp"
#include "ebtm/math.hpp"
#include "ebtm/rbm.hpp"
#include "ebtm/rsm.hpp"

namespace ebtm::checkpoint {

// Container layout:
//   8-byte magic "EBMCKPT1"
//   metadata as "key=value\n" lines (order preserved), one blank line
//   tensors, each as: name line, rank line, space-separated dims line,
//   then the values row-major as IEEE-754 64-bit little-endian.
inline constexpr char kMagic[8] = {'E', 'B', 'M', 'C', 'K', 'P', 'T', '1'};

struct Tensor {
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> values;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (std::size_t d : dims) n *= d;
    return n;
  }
};

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<Tensor> tensors;

  const std::string* meta(const std::string& key) const {
    for (const auto& [k, v] : metadata) {
      if (k == key) return &v;
    }
    return nullptr;
  }
  const Tensor* find(const std::string& name) const {
    for (const Tensor& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

inline void write_doubles_le(std::ostream& out, const double* values, std::size_t count) {
  if (count == 0) return;
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(count * 8));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t bits;
      std::memcpy(&bits, &values[i], 8);
      char buf[8];
      for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
      out.write(buf, 8);
    }
  }
}

inline void read_doubles_le(std::istream& in, double* values, std::size_t count) {
  if (count == 0) return;
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(values), static_cast<std::streamsize>(count * 8));
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      char buf[8];
      in.read(buf, 8);
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
      }
      std::memcpy(&values[i], &bits, 8);
    }
  }
}

inline void serialize(std::ostream& out, const Checkpoint& ckpt) {
  out.write(kMagic, 8);
  for (const auto& [key, value] : ckpt.metadata) {
    require(!key.empty() && key.find('=') == std::string::npos &&
                key.find('\n') == std::string::npos,
            "checkpoint: metadata key may not be empty or contain '=' or newline");
    require(value.find('\n') == std::string::npos,
            "checkpoint: metadata value may not contain newline");
    out << key << '=' << value << '\n';
  }
  out << '\n';
  for (const Tensor& t : ckpt.tensors) {
    require(!t.name.empty() && t.name.find('\n') == std::string::npos,
            "checkpoint: tensor name may not be empty or contain newline");
    require(t.values.size() == t.element_count(), "checkpoint: tensor value count mismatch");
    out << t.name << '\n' << t.dims.size() << '\n';
    for (std::size_t i = 0; i < t.dims.size(); ++i) {
      if (i > 0) out << ' ';
      out << t.dims[i];
    }
    out << '\n';
    write_doubles_le(out, t.values.data(), t.values.size());
  }
}

}  // namespace detail

inline void write(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("checkpoint: cannot open for writing: " + path);
  detail::serialize(out, ckpt);
  out.flush();
  if (!out) throw IoError("checkpoint: write failed: " + path);
}

inline Checkpoint read(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0) {
    throw IoError("checkpoint: bad magic in " + path);
  }
  Checkpoint ckpt;
  std::string line;
  while (true) {
    if (!std::getline(in, line)) throw IoError("checkpoint: truncated metadata in " + path);
    if (line.empty()) break;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw IoError("checkpoint: malformed metadata line in " + path);
    }
    ckpt.metadata.emplace_back(line.substr(0, eq), line.substr(eq + 1));
  }
  while (in.peek() != std::char_traits<char>::eof()) {
    Tensor t;
    if (!std::getline(in, t.name) || t.name.empty()) {
      throw IoError("checkpoint: malformed tensor name in " + path);
    }
    if (!std::getline(in, line)) throw IoError("checkpoint: truncated tensor rank in " + path);
    std::size_t rank = 0;
    try {
      rank = static_cast<std::size_t>(std::stoull(line));
    } catch (const std::exception&) {
      throw IoError("checkpoint: bad tensor rank in " + path);
    }
    if (!std::getline(in, line)) throw IoError("checkpoint: truncated tensor dims in " + path);
    std::istringstream dims(line);
    for (std::size_t i = 0; i < rank; ++i) {
      std::size_t d = 0;
      if (!(dims >> d)) throw IoError("checkpoint: bad tensor dims in " + path);
      t.dims.push_back(d);
    }
    std::string trailing;
    if (dims >> trailing) throw IoError("checkpoint: trailing tensor dims in " + path);
    t.values.resize(t.element_count());
    detail::read_doubles_le(in, t.values.data(), t.values.size());
    if (!in && t.element_count() > 0) {
      throw IoError("checkpoint: truncated tensor values in " + path);
    }
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

/// FNV-1a over the serialized byte stream; used for provenance records.
inline std::uint64_t content_hash(const Checkpoint& ckpt) {
  std::ostringstream out(std::ios::binary);
  detail::serialize(out, ckpt);
  const std::string bytes = out.str();
  return fnv1a64(std::string_view(bytes));
}

namespace detail {

inline Tensor matrix_tensor(const std::string& name, const MatrixRM& m) {
  Tensor t;
  t.name = name;
  t.dims = {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())};
  t.values.assign(m.data(), m.data() + m.size());
  return t;
}

inline Tensor vector_tensor(const std::string& name, const Vector& v) {
  Tensor t;
  t.name = name;
  t.dims = {static_cast<std::size_t>(v.size())};
  t.values.assign(v.data(), v.data() + v.size());
  return t;
}

inline MatrixRM tensor_matrix(const Checkpoint& ckpt, const std::string& name) {
  const Tensor* t = ckpt.find(name);
  require(t != nullptr, "checkpoint: missing tensor " + name);
  require(t->dims.size() == 2, "checkpoint: tensor " + name + " must have rank 2");
  MatrixRM m(static_cast<Eigen::Index>(t->dims[0]), static_cast<Eigen::Index>(t->dims[1]));
  if (!t->values.empty()) {
    std::memcpy(m.data(), t->values.data(), t->values.size() * sizeof(double));
  }
  return m;
}

inline Vector tensor_vector(const Checkpoint& ckpt, const std::string& name) {
  const Tensor* t = ckpt.find(name);
  require(t != nullptr, "checkpoint: missing tensor " + name);
  require(t->dims.size() == 1, "checkpoint: tensor " + name + " must have rank 1");
  Vector v(static_cast<Eigen::Index>(t->dims[0]));
  if (!t->values.empty()) {
    std::memcpy(v.data(), t->values.data(), t->values.size() * sizeof(double));
  }
  return v;
}

inline void check_model_kind(const Checkpoint& ckpt, const std::string& kind) {
  const std::string* model = ckpt.meta("model");
  require(model != nullptr, "checkpoint: missing model metadata");
  require(*model == kind, "checkpoint: expected model " + kind + ", found " + *model);
}

}  // namespace detail

using Metadata = std::vector<std::pair<std::string, std::string>>;

inline Checkpoint from_rbm(const rbm::RbmParams& p, const Metadata& extra = {}) {
  p.validate();
  Checkpoint ckpt;
  ckpt.metadata.emplace_back("model", "rbm");
  ckpt.metadata.emplace_back("visible", std::to_string(p.visible()));
  ckpt.metadata.emplace_back("hidden", std::to_string(p.hidden()));
  ckpt.metadata.insert(ckpt.metadata.end(), extra.begin(), extra.end());
  ckpt.tensors.push_back(detail::matrix_tensor("W", p.W));
  ckpt.tensors.push_back(detail::vector_tensor("a", p.a));
  ckpt.tensors.push_back(detail::vector_tensor("b", p.b));
  return ckpt;
}

inline rbm::RbmParams to_rbm(const Checkpoint& ckpt) {
  detail::check_model_kind(ckpt, "rbm");
  rbm::RbmParams p;
  p.W = detail::tensor_matrix(ckpt, "W");
  p.a = detail::tensor_vector(ckpt, "a");
  p.b = detail::tensor_vector(ckpt, "b");
  p.validate();
  return p;
}

inline Checkpoint from_rsm(const rsm::RsmParams& p, const Metadata& extra = {}) {
  p.validate();
  Checkpoint ckpt;
  ckpt.metadata.emplace_back("model", "rsm");
  ckpt.metadata.emplace_back("visible", std::to_string(p.vocab()));
  ckpt.metadata.emplace_back("hidden", std::to_string(p.hidden()));
  ckpt.metadata.insert(ckpt.metadata.end(), extra.begin(), extra.end());
  ckpt.tensors.push_back(detail::matrix_tensor("W", p.W));
  ckpt.tensors.push_back(detail::vector_tensor("a", p.a));
  ckpt.tensors.push_back(detail::vector_tensor("b", p.b));
  return ckpt;
}

inline rsm::RsmParams to_rsm(const Checkpoint& ckpt) {
  detail::check_model_kind(ckpt, "rsm");
  rsm::RsmParams p;
  p.W = detail::tensor_matrix(ckpt, "W");
  p.a = detail::tensor_vector(ckpt, "a");
  p.b = detail::tensor_vector(ckpt, "b");
  p.validate();
  return p;
}

inline Checkpoint from_dbm(const dbm::DbmParams& p, const Metadata& extra = {}) {
  p.validate();
  Checkpoint ckpt;
  ckpt.metadata.emplace_back("model", "dbm2");
  ckpt.metadata.emplace_back("visible", std::to_string(p.vocab()));
  ckpt.metadata.emplace_back("hidden1", std::to_string(p.hidden1()));
  ckpt.metadata.emplace_back("hidden2", std::to_string(p.hidden2()));
  ckpt.metadata.insert(ckpt.metadata.end(), extra.begin(), extra.end());
  ckpt.tensors.push_back(detail::matrix_tensor("W1", p.W1));
  ckpt.tensors.push_back(detail::matrix_tensor("W2", p.W2));
  ckpt.tensors.push_back(detail::vector_tensor("a", p.a));
  ckpt.tensors.push_back(detail::vector_tensor("b1", p.b1));
  ckpt.tensors.push_back(detail::vector_tensor("b2", p.b2));
  return ckpt;
}

inline dbm::DbmParams to_dbm(const Checkpoint& ckpt) {
  detail::check_model_kind(ckpt, "dbm2");
  dbm::DbmParams p;
  p.W1 = detail::tensor_matrix(ckpt, "W1");
  p.W2 = detail::tensor_matrix(ckpt, "W2");
  p.a = detail::tensor_vector(ckpt, "a");
  p.b1 = detail::tensor_vector(ckpt, "b1");
  p.b2 = detail::tensor_vector(ckpt, "b2");
  p.validate();
  return p;
}

}  // namespace ebtm::checkpoint
