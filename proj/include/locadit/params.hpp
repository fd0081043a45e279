//
// Flat parameter vector with a named-slice manifest, momentum SGD, and
// checkpoint serialization (magic "LCPT": JSON manifest with slice names,
// shapes, hyperparameters and the init seed, then an f32 payload).
//

#pragma once

#include <cstring>
#include <fstream>
#include <numeric>
#include <span>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "locadit/core.hpp"
#include "locadit/io.hpp"
#include "locadit/rng.hpp"

namespace locadit {

class ParamStore {
 public:
  struct Slice {
    std::string name;
    size_t offset = 0;
    size_t size = 0;
    std::vector<int> shape;
  };

  uint64_t init_seed = 0;
  nlohmann::json hyper;  // free-form stage hyperparameters, kept with checkpoints

  size_t total() const { return values_.size(); }
  const std::vector<Slice>& slices() const { return slices_; }
  std::vector<double>& values() { return values_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& grads() { return grads_; }

  bool has(const std::string& name) const { return by_name_.count(name) > 0; }

  const Slice& slice(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) fail(errc::shape_mismatch, "unknown parameter slice: " + name);
    return slices_[it->second];
  }

  std::span<double> view(const std::string& name) {
    const Slice& s = slice(name);
    return {values_.data() + s.offset, s.size};
  }
  std::span<const double> view(const std::string& name) const {
    const Slice& s = slice(name);
    return {values_.data() + s.offset, s.size};
  }

  /// Registers a zero-initialized slice and returns it.
  const Slice& add(const std::string& name, std::vector<int> shape) {
    if (by_name_.count(name)) fail(errc::shape_mismatch, "duplicate parameter slice: " + name);
    Slice s;
    s.name = name;
    s.shape = std::move(shape);
    s.size = 1;
    for (int d : s.shape) s.size *= size_t(d);
    s.offset = values_.size();
    values_.resize(values_.size() + s.size, 0.0);
    grads_.resize(values_.size(), 0.0);
    velocity_.resize(values_.size(), 0.0);
    by_name_[name] = slices_.size();
    slices_.push_back(s);
    return slices_.back();
  }

  /// add + uniform(-scale, scale) init from a forked stream named after the slice.
  const Slice& add_uniform(const std::string& name, std::vector<int> shape, double scale,
                           const Rng& root) {
    const Slice& s = add(name, std::move(shape));
    Rng rng = root.fork(name);
    for (size_t i = 0; i < s.size; ++i) values_[s.offset + i] = rng.uniform(-scale, scale);
    return s;
  }

  /// add + Glorot-style fan-scaled init.
  const Slice& add_glorot(const std::string& name, int fan_in, int fan_out,
                          std::vector<int> shape, const Rng& root) {
    return add_uniform(name, std::move(shape), std::sqrt(6.0 / double(fan_in + fan_out)), root);
  }

  void zero_grad() { std::fill(grads_.begin(), grads_.end(), 0.0); }

  void sgd_step(double lr, double momentum = 0.9) {
    for (size_t i = 0; i < values_.size(); ++i) {
      velocity_[i] = momentum * velocity_[i] + grads_[i];
      values_[i] -= lr * velocity_[i];
    }
  }

  void check_finite() const {
    for (double v : values_)
      if (!std::isfinite(v)) fail(errc::shape_mismatch, "non-finite parameter value");
  }

  // -------------------------------------------------------------------------
  // checkpoints
  // -------------------------------------------------------------------------

  void save(const std::string& path) const {
    auto out = detail::open_out(path, true);
    nlohmann::json manifest;
    manifest["seed"] = init_seed;
    manifest["hyperparameters"] = hyper.is_null() ? nlohmann::json::object() : hyper;
    manifest["slices"] = nlohmann::json::array();
    for (const Slice& s : slices_)
      manifest["slices"].push_back(
          {{"name", s.name}, {"offset", s.offset}, {"size", s.size}, {"shape", s.shape}});
    std::string m = manifest.dump();
    out.write("LCPT", 4);
    uint32_t mlen = uint32_t(m.size());
    out.write(reinterpret_cast<const char*>(&mlen), 4);
    out.write(m.data(), std::streamsize(m.size()));
    for (double v : values_) {
      float f = float(v);
      out.write(reinterpret_cast<const char*>(&f), 4);
    }
    if (!out) fail(errc::io_error, "write failed: " + path);
  }

  static ParamStore load(const std::string& path) {
    auto in = detail::open_in(path, true);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "LCPT", 4) != 0) fail(errc::io_error, "not a LCPT file: " + path);
    uint32_t mlen = 0;
    in.read(reinterpret_cast<char*>(&mlen), 4);
    std::string m(mlen, '\0');
    in.read(m.data(), mlen);
    if (!in) fail(errc::io_error, "truncated LCPT manifest: " + path);
    auto manifest = nlohmann::json::parse(m);

    ParamStore store;
    store.init_seed = manifest.value("seed", uint64_t(0));
    store.hyper = manifest.value("hyperparameters", nlohmann::json::object());
    for (const auto& js : manifest.at("slices")) {
      Slice s;
      s.name = js.at("name").get<std::string>();
      s.offset = js.at("offset").get<size_t>();
      s.size = js.at("size").get<size_t>();
      s.shape = js.at("shape").get<std::vector<int>>();
      if (s.offset != store.values_.size()) fail(errc::io_error, "non-contiguous slice manifest");
      store.values_.resize(store.values_.size() + s.size, 0.0);
      store.by_name_[s.name] = store.slices_.size();
      store.slices_.push_back(s);
    }
    store.grads_.assign(store.values_.size(), 0.0);
    store.velocity_.assign(store.values_.size(), 0.0);
    for (double& v : store.values_) {
      float f;
      in.read(reinterpret_cast<char*>(&f), 4);
      v = double(f);
    }
    if (!in) fail(errc::io_error, "truncated LCPT payload: " + path);
    return store;
  }

 private:
  std::vector<double> values_, grads_, velocity_;
  std::vector<Slice> slices_;
  std::unordered_map<std::string, size_t> by_name_;

  friend class Tape;
};

}  // namespace locadit
