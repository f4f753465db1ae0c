#include "kdar/parameters.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "kdar/error.hpp"

namespace kdar {

template <typename Real>
ParamId ParameterStore<Real>::add(std::string name, Index rows, Index cols) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter<Real>>();
  p->name = std::move(name);
  p->value = Matrix<Real>::Zero(rows, cols);
  p->grad = Matrix<Real>::Zero(rows, cols);
  params_.push_back(std::move(p));
  return ParamId{params_.size() - 1};
}

template <typename Real>
ParamId ParameterStore<Real>::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i]->name == name) return ParamId{i};
  }
  throw std::out_of_range("unknown parameter: " + name);
}

template <typename Real>
bool ParameterStore<Real>::contains(const std::string& name) const {
  for (const auto& p : params_) {
    if (p->name == name) return true;
  }
  return false;
}

template <typename Real>
std::size_t ParameterStore<Real>::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template <typename Real>
void ParameterStore<Real>::zero_grad() {
  for (auto& p : params_) p->grad.setZero(p->value.rows(), p->value.cols());
}

template <typename Real>
void ParameterStore<Real>::xavier_uniform(std::mt19937_64& rng) {
  for (auto& p : params_) {
    const double bound = std::sqrt(6.0 / static_cast<double>(p->value.rows() + p->value.cols()));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Index k = 0; k < p->value.size(); ++k) p->value.data()[k] = static_cast<Real>(dist(rng));
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;

template <typename Real>
Adam<Real>::Adam(const ParameterStore<Real>& store, AdamOptions options) : options_(options) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& value = store[ParamId{i}].value;
    m_.push_back(Matrix<Real>::Zero(value.rows(), value.cols()));
    v_.push_back(Matrix<Real>::Zero(value.rows(), value.cols()));
  }
}

template <typename Real>
void Adam<Real>::step(ParameterStore<Real>& store, double lr) {
  ++step_;
  const Real b1 = static_cast<Real>(options_.beta1);
  const Real b2 = static_cast<Real>(options_.beta2);
  const Real eps = static_cast<Real>(options_.eps);
  const double t = static_cast<double>(step_);
  const Real bias1 = static_cast<Real>(1.0 - std::pow(options_.beta1, t));
  const Real bias2 = static_cast<Real>(1.0 - std::pow(options_.beta2, t));
  const Real step_size = static_cast<Real>(lr) / bias1;
  const Real sqrt_bias2 = std::sqrt(bias2);
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& p = store[ParamId{i}];
    auto g = p.grad.array();
    m_[i].array() = b1 * m_[i].array() + (1 - b1) * g;
    v_[i].array() = b2 * v_[i].array() + (1 - b2) * g.square();
    p.value.array() -= step_size * m_[i].array() / (v_[i].array().sqrt() / sqrt_bias2 + eps);
    p.grad.setZero();
  }
}

template <typename Real>
void Adam<Real>::restore(std::int64_t steps, std::vector<Matrix<Real>> m,
                         std::vector<Matrix<Real>> v) {
  if (m.size() != m_.size() || v.size() != v_.size()) {
    throw CheckpointError("optimizer state does not match parameter count");
  }
  step_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class Adam<float>;
template class Adam<double>;

// ---- checkpoint io ---------------------------------------------------------

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

constexpr std::array<char, 4> kMagic = {'K', 'D', 'A', 'R'};

struct NamedTensor {
  std::string name;
  Index rows = 0;
  Index cols = 0;
  std::vector<float> data;
};

void write_u32(std::ostream& out, std::uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename Real>
void write_tensor(std::ostream& out, const std::string& name, const Matrix<Real>& m) {
  write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  write_u32(out, 2);
  write_u32(out, static_cast<std::uint32_t>(m.rows()));
  write_u32(out, static_cast<std::uint32_t>(m.cols()));
  for (Index k = 0; k < m.size(); ++k) {
    const float f = static_cast<float>(m.data()[k]);
    out.write(reinterpret_cast<const char*>(&f), sizeof f);
  }
}

class Reader {
 public:
  Reader(std::istream& in, std::string path) : in_(in), path_(std::move(path)) {}

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  void read(void* dst, std::size_t n) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw CheckpointError("corrupt checkpoint (truncated): " + path_);
    }
  }

  std::uint32_t u32() {
    std::uint32_t v = 0;
    read(&v, sizeof v);
    return v;
  }

  NamedTensor tensor() {
    NamedTensor t;
    const std::uint32_t name_len = u32();
    if (name_len > 4096) throw CheckpointError("corrupt checkpoint (name length): " + path_);
    t.name.resize(name_len);
    read(t.name.data(), name_len);
    const std::uint32_t rank = u32();
    if (rank < 1 || rank > 2) throw CheckpointError("corrupt checkpoint (rank): " + path_);
    t.rows = u32();
    t.cols = rank == 2 ? u32() : 1;
    const auto n = static_cast<std::size_t>(t.rows * t.cols);
    if (n > (std::size_t{1} << 32)) throw CheckpointError("corrupt checkpoint (size): " + path_);
    t.data.resize(n);
    read(t.data.data(), n * sizeof(float));
    return t;
  }

 private:
  std::istream& in_;
  std::string path_;
};

template <typename Real>
Matrix<Real> to_matrix(const NamedTensor& t) {
  Matrix<Real> m(t.rows, t.cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = static_cast<Real>(t.data[static_cast<std::size_t>(k)]);
  return m;
}

}  // namespace

template <typename Real>
void save_checkpoint(const std::filesystem::path& path, const ParameterStore<Real>& store,
                     const Adam<Real>* adam) {
  // Write next to the target and rename, so a crash never leaves a torn file.
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic.data(), kMagic.size());
    write_u32(out, kCheckpointVersion);
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& p = store[ParamId{i}];
      write_tensor(out, p.name, p.value);
    }
    if (adam != nullptr) {
      for (std::size_t i = 0; i < store.size(); ++i) {
        const auto& name = store[ParamId{i}].name;
        write_tensor(out, "adam.m/" + name, adam->first_moments()[i]);
        write_tensor(out, "adam.v/" + name, adam->second_moments()[i]);
      }
      Matrix<Real> step(1, 1);
      step(0, 0) = static_cast<Real>(adam->steps());
      write_tensor(out, "adam.step", step);
    }
    if (!out) throw CheckpointError("failed writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename Real>
void load_checkpoint(const std::filesystem::path& path, ParameterStore<Real>& store,
                     Adam<Real>* adam) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  Reader reader(in, path.string());
  std::array<char, 4> magic{};
  reader.read(magic.data(), magic.size());
  if (magic != kMagic) throw CheckpointError("corrupt checkpoint (bad magic): " + path.string());
  const std::uint32_t version = reader.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + ": " +
                          path.string());
  }

  std::vector<Matrix<Real>> values;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store[ParamId{i}];
    NamedTensor t = reader.tensor();
    if (t.name != p.name) {
      throw CheckpointError("checkpoint parameter '" + t.name + "' where '" + p.name +
                            "' was expected");
    }
    if (t.rows != p.value.rows() || t.cols != p.value.cols()) {
      throw CheckpointError("shape mismatch for '" + p.name + "': checkpoint " +
                            std::to_string(t.rows) + "x" + std::to_string(t.cols) + ", model " +
                            std::to_string(p.value.rows()) + "x" + std::to_string(p.value.cols()));
    }
    values.push_back(to_matrix<Real>(t));
  }

  std::vector<Matrix<Real>> m, v;
  std::int64_t steps = 0;
  bool has_moments = false;
  if (!reader.at_end()) {
    has_moments = true;
    for (std::size_t i = 0; i < store.size(); ++i) {
      const auto& p = store[ParamId{i}];
      for (auto* dst : {&m, &v}) {
        NamedTensor t = reader.tensor();
        const std::string expected = (dst == &m ? "adam.m/" : "adam.v/") + p.name;
        if (t.name != expected || t.rows != p.value.rows() || t.cols != p.value.cols()) {
          throw CheckpointError("corrupt checkpoint (optimizer state for '" + p.name + "')");
        }
        dst->push_back(to_matrix<Real>(t));
      }
    }
    NamedTensor t = reader.tensor();
    if (t.name != "adam.step" || t.data.size() != 1) {
      throw CheckpointError("corrupt checkpoint (optimizer step)");
    }
    steps = static_cast<std::int64_t>(t.data[0]);
  }

  for (std::size_t i = 0; i < store.size(); ++i) store[ParamId{i}].value = std::move(values[i]);
  if (adam != nullptr && has_moments) adam->restore(steps, std::move(m), std::move(v));
}

template void save_checkpoint<float>(const std::filesystem::path&, const ParameterStore<float>&,
                                     const Adam<float>*);
template void save_checkpoint<double>(const std::filesystem::path&, const ParameterStore<double>&,
                                      const Adam<double>*);
template void load_checkpoint<float>(const std::filesystem::path&, ParameterStore<float>&,
                                     Adam<float>*);
template void load_checkpoint<double>(const std::filesystem::path&, ParameterStore<double>&,
                                      Adam<double>*);

}  // namespace kdar
