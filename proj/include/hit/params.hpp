#pragma once

#include "hit/graph.hpp"
#include "hit/rng.hpp"
#include "hit/tensor.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>

namespace hit {

/// Named learnable tensors. Iteration order is lexicographic by name
/// (std::map), which pins checkpoint layout and gradient reports.
/// Initial values depend only on (rng_seed, name), never on registration
/// order.
template <class Scalar>
struct ParamSetT {
  uint64_t rng_seed = 0;
  std::map<std::string, TensorT<Scalar>> values;

  explicit ParamSetT(uint64_t seed = 0) : rng_seed(seed) {}

  bool contains(const std::string& name) const { return values.count(name) != 0; }

  TensorT<Scalar>& at(const std::string& name) {
    auto it = values.find(name);
    if (it == values.end()) throw std::invalid_argument("params: unknown parameter '" + name + "'");
    return it->second;
  }
  const TensorT<Scalar>& at(const std::string& name) const {
    auto it = values.find(name);
    if (it == values.end()) throw std::invalid_argument("params: unknown parameter '" + name + "'");
    return it->second;
  }

  void add_zeros(const std::string& name, Shape shape) { insert(name, TensorT<Scalar>(shape)); }

  void add_constant(const std::string& name, Shape shape, Scalar v) {
    insert(name, TensorT<Scalar>::full(std::move(shape), v));
  }

  void add_uniform(const std::string& name, Shape shape, double lo, double hi) {
    TensorT<Scalar> t(std::move(shape));
    Rng rng(mix_seed(rng_seed, name));
    Scalar* p = t.data();
    for (Eigen::Index i = 0; i < t.size(); ++i)
      p[i] = static_cast<Scalar>(rng.uniform(lo, hi));
    insert(name, std::move(t));
  }

  // weight uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], bias zero
  void add_linear(const std::string& prefix, Eigen::Index fan_in, Eigen::Index fan_out) {
    double b = 1.0 / std::sqrt(static_cast<double>(fan_in));
    add_uniform(prefix + ".w", {fan_in, fan_out}, -b, b);
    add_zeros(prefix + ".b", {1, fan_out});
  }

 private:
  void insert(const std::string& name, TensorT<Scalar> t) {
    if (contains(name)) throw std::invalid_argument("params: duplicate parameter '" + name + "'");
    values.emplace(name, std::move(t));
  }
};

/// Seeded uniform offset on every coordinate. Gradient checks run at such
/// a generic point: the symmetric init (equal thetas, zero biases) sits
/// on measure-zero surfaces where some gradients vanish identically and
/// relu preactivations straddle their kink.
template <class Scalar>
void perturb_params(ParamSetT<Scalar>& ps, double amplitude, uint64_t seed) {
  for (auto& [name, tensor] : ps.values) {
    Rng rng(mix_seed(seed, name));
    Scalar* p = tensor.data();
    for (Eigen::Index i = 0; i < tensor.size(); ++i)
      p[i] += static_cast<Scalar>(rng.uniform(-amplitude, amplitude));
  }
}

/// Binds parameters into a graph as differentiable leaves, one node per
/// parameter per graph, cached by name.
template <class Scalar>
class BoundParams {
 public:
  BoundParams(GraphT<Scalar>& g, ParamSetT<Scalar>& ps) : g_(&g), ps_(&ps) {}

  VarT<Scalar> operator()(const std::string& name) {
    auto it = vars_.find(name);
    if (it != vars_.end()) return it->second;
    VarT<Scalar> v = g_->leaf(ps_->at(name), /*requires_grad=*/true, name);
    vars_.emplace(name, v);
    return v;
  }

  ParamSetT<Scalar>& params() { return *ps_; }
  GraphT<Scalar>& graph() { return *g_; }

  /// Gradients after backward(); parameters the loss never reached get
  /// zeros.
  std::map<std::string, TensorT<Scalar>> collect_grads() const {
    std::map<std::string, TensorT<Scalar>> out;
    for (const auto& [name, value] : ps_->values) {
      auto it = vars_.find(name);
      if (it != vars_.end() && g_->has_grad(it->second.node))
        out.emplace(name, g_->grad(it->second.node));
      else
        out.emplace(name, TensorT<Scalar>(value.shape()));
    }
    return out;
  }

 private:
  GraphT<Scalar>* g_;
  ParamSetT<Scalar>* ps_;
  std::map<std::string, VarT<Scalar>> vars_;
};

// ---------------------------------------------------------------------------
// checkpoint format: "HITCKPT1" | u32 LE manifest length | JSON manifest
// [{name, shape, offset}...] in lexicographic name order | raw LE float32
// blobs. Round-trips bit-exactly.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'H', 'I', 'T', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline void put_u32_le(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32_le(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace detail

template <class Scalar>
void save_checkpoint(const std::string& path, const ParamSetT<Scalar>& ps) {
  nlohmann::json manifest = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& [name, t] : ps.values) {  // std::map: lexicographic
    nlohmann::json entry;
    entry["name"] = name;
    entry["shape"] = t.shape();
    entry["offset"] = offset;
    manifest.push_back(entry);
    offset += static_cast<uint64_t>(t.size()) * sizeof(float);
  }
  std::string mtext = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kCheckpointMagic, 8);
  detail::put_u32_le(os, static_cast<uint32_t>(mtext.size()));
  os.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& [name, t] : ps.values) {
    TensorT<float> f = t.template cast<float>();
    os.write(reinterpret_cast<const char*>(f.data()),
             static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(f.size())));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

inline ParamSetT<float> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in '" + path + "'");
  uint32_t mlen = detail::get_u32_le(is);
  std::string mtext(mlen, '\0');
  is.read(mtext.data(), mlen);
  if (!is) throw std::runtime_error("checkpoint: truncated manifest in '" + path + "'");
  nlohmann::json manifest = nlohmann::json::parse(mtext);

  ParamSetT<float> ps;
  std::streampos blob_start = is.tellg();
  for (const auto& entry : manifest) {
    std::string name = entry.at("name").get<std::string>();
    Shape shape = entry.at("shape").get<Shape>();
    uint64_t offset = entry.at("offset").get<uint64_t>();
    TensorT<float> t(shape);
    is.seekg(blob_start + static_cast<std::streamoff>(offset));
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(t.size())));
    if (!is) throw std::runtime_error("checkpoint: truncated blob for '" + name + "'");
    ps.values.emplace(std::move(name), std::move(t));
  }
  return ps;
}

}  // namespace hit
