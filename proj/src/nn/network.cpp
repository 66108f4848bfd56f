#include "pv/nn/network.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pv/digest.hpp"
#include "pv/errors.hpp"

namespace pv::nn {

Layer& Network::add(std::unique_ptr<Layer> layer) {
  if (find(layer->id())) throw ConfigError("duplicate layer id '" + layer->id() + "'");
  Dims out;
  try {
    out = layer->output_dims(output_dims());
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  if (out.height <= 0 || out.width <= 0 || out.channels <= 0)
    throw ConfigError("layer '" + layer->id() + "' produces an empty output");
  dims_.push_back(out);
  layers_.push_back(std::move(layer));
  return *layers_.back();
}

std::optional<std::size_t> Network::find(std::string_view id) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    if (layers_[i]->id() == id) return i;
  return std::nullopt;
}

Tensor Network::forward(const Tensor& x, Mode mode, Tape* tape, std::size_t begin,
                        std::size_t end) const {
  end = std::min(end, layers_.size());
  const Dims expected = begin == 0 ? input_ : dims_.at(begin - 1);
  if (x.dims() != expected)
    throw ShapeError("network input " + to_string(x.dims()) + " does not match expected " +
                     to_string(expected));
  if (tape) {
    tape->begin = begin;
    tape->caches.assign(end - begin, {});
  }
  Tensor h = x;
  for (std::size_t i = begin; i < end; ++i)
    h = layers_[i]->forward(h, mode, tape ? &tape->caches[i - begin] : nullptr);
  return h;
}

Tensor Network::backward(const Tape& tape, const Tensor& grad_out, Gradients* grads,
                         bool need_input_grad) const {
  Tensor g = grad_out;
  for (std::size_t j = tape.caches.size(); j-- > 0;) {
    const std::size_t i = tape.begin + j;
    std::span<double> pg;
    if (grads) pg = (*grads)[i];
    const bool need = j > 0 || need_input_grad;
    g = layers_[i]->backward(tape.caches[j], g, pg, need);
  }
  return g;
}

Gradients Network::zero_gradients() const {
  Gradients g(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) g[i].assign(layers_[i]->params().size(), 0.0);
  return g;
}

void Network::commit(const Tape& tape) {
  for (std::size_t j = 0; j < tape.caches.size(); ++j) layers_[tape.begin + j]->commit(tape.caches[j]);
}

void Network::initialize(unsigned long long seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : layers_) l->initialize(rng);
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->params().size();
  return n;
}

std::string Network::digest(std::size_t begin, std::size_t end) const {
  end = std::min(end, layers_.size());
  Sha256 h;
  for (std::size_t i = begin; i < end; ++i) {
    const Layer& l = *layers_[i];
    h.update(l.id()).update("|").update(l.kind()).update("|");
    h.update(l.params());
    h.update(l.buffers());
  }
  return h.hex();
}

std::vector<std::pair<std::size_t, std::size_t>> Network::edges() const {
  std::vector<std::pair<std::size_t, std::size_t>> e;
  for (std::size_t i = 0; i + 1 < layers_.size(); ++i) e.emplace_back(i, i + 1);
  return e;
}

// --------------------------------------------------------------- weights IO

namespace {

constexpr char kMagic[4] = {'P', 'V', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw LoadError("weight blob truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_weights(const Network& net) {
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(net.size()));
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& l = net.layer(i);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.id().size()));
    out += l.id();
    put<std::uint64_t>(out, l.params().size());
    put<std::uint64_t>(out, l.buffers().size());
    out.append(reinterpret_cast<const char*>(l.params().data()), l.params().size_bytes());
    out.append(reinterpret_cast<const char*>(l.buffers().data()), l.buffers().size_bytes());
  }
  return out;
}

void deserialize_weights(std::string_view blob, Network& net) {
  Reader r(blob);
  if (r.bytes(4) != std::string_view(kMagic, 4)) throw LoadError("not a weight file (bad magic)");
  if (r.get<std::uint32_t>() != kVersion) throw LoadError("unsupported weight file version");
  const auto count = r.get<std::uint32_t>();
  if (count != net.size())
    throw LoadError("weight file holds " + std::to_string(count) + " layers, descriptor declares " +
                    std::to_string(net.size()));
  for (std::size_t i = 0; i < count; ++i) {
    const auto idlen = r.get<std::uint32_t>();
    const std::string id(r.bytes(idlen));
    Layer& l = net.layer(i);
    if (id != l.id())
      throw LoadError("weight file layer " + std::to_string(i) + " is '" + id + "', descriptor has '" +
                      l.id() + "'");
    const auto np = r.get<std::uint64_t>();
    const auto nb = r.get<std::uint64_t>();
    if (np != l.params().size() || nb != l.buffers().size())
      throw LoadError("shape mismatch for layer '" + id + "': file has " + std::to_string(np) +
                      " parameters, descriptor expects " + std::to_string(l.params().size()));
    auto p = r.bytes(np * sizeof(double));
    std::memcpy(l.params().data(), p.data(), p.size());
    auto b = r.bytes(nb * sizeof(double));
    std::memcpy(l.buffers().data(), b.data(), b.size());
  }
  if (!r.done()) throw LoadError("trailing bytes after weight blob");
}

void save_weights(const std::string& path, const Network& net) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot write weights to '" + path + "'");
  const std::string blob = serialize_weights(net);
  f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
}

void load_weights(const std::string& path, Network& net) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("weights file '" + path + "' not found");
  std::ostringstream ss;
  ss << f.rdbuf();
  deserialize_weights(ss.str(), net);
}

}  // namespace pv::nn
