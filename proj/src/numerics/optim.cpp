#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <optional>

#include "synflow/numerics.hpp"

namespace synflow::nn {

void adam_step(ParamStore& store, const AdamConfig& config) {
  for (const auto& p : store.params()) {
    if (!p.trainable || !config.lr.count(p.group)) continue;
    for (double g : p.grad)
      if (!std::isfinite(g)) throw NonFiniteGradient("non-finite gradient in parameter " + p.name);
  }
  for (auto& p : store.params()) {
    if (!p.trainable) continue;
    const auto it = config.lr.find(p.group);
    if (it == config.lr.end()) continue;
    const double lr = it->second;
    ++p.steps;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(p.steps));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(p.steps));
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = p.grad[i];
      p.m[i] = config.beta1 * p.m[i] + (1.0 - config.beta1) * g;
      p.v[i] = config.beta2 * p.v[i] + (1.0 - config.beta2) * g * g;
      const double mhat = p.m[i] / c1;
      const double vhat = p.v[i] / c2;
      p.value[i] = static_cast<float>(static_cast<double>(p.value[i]) - lr * mhat / (std::sqrt(vhat) + config.eps));
    }
  }
}

GradCheckResult grad_check(ParamStore& store, const std::function<Var(Tape&)>& loss_fn, double h, Rng& rng,
                           int max_coords_per_param) {
  if (!(h >= 1e-5 && h <= 1e-2)) throw ContractViolation("grad_check step outside [1e-5, 1e-2]");
  store.clear_probe();
  store.zero_grad();
  std::uint64_t base_branches = 0;
  {
    Tape tape(&store);
    tape.backward(loss_fn(tape));
    base_branches = tape.branch_signature();
  }
  std::vector<std::vector<double>> analytic;
  for (const auto& p : store.params()) analytic.push_back(p.grad);

  // Loss at a probed offset; nullopt when it lies on a different smooth piece.
  auto eval = [&](const std::string& name, std::size_t i, double offset) -> std::optional<double> {
    store.set_probe(name, i, offset);
    Tape tape(&store);
    const double v = tape.item(loss_fn(tape));
    store.clear_probe();
    if (tape.branch_signature() != base_branches) return std::nullopt;
    return v;
  };

  GradCheckResult res;
  for (std::size_t pi = 0; pi < store.params().size(); ++pi) {
    const auto& p = store.params()[pi];
    if (!p.trainable) continue;
    std::vector<std::size_t> coords;
    if (max_coords_per_param <= 0 || p.size() <= static_cast<std::size_t>(max_coords_per_param)) {
      for (std::size_t i = 0; i < p.size(); ++i) coords.push_back(i);
    } else {
      for (int c = 0; c < max_coords_per_param; ++c) coords.push_back(rng.uniform_index(p.size()));
    }
    for (std::size_t i : coords) {
      std::optional<double> numeric;
      for (double step = h; step >= 1e-8 && !numeric; step /= 10.0) {
        const auto plus = eval(p.name, i, step), minus = eval(p.name, i, -step);
        if (plus && minus) numeric = (*plus - *minus) / (2.0 * step);
      }
      if (!numeric) {
        ++res.kinks;
        continue;
      }
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(*numeric), 1e-6});
      const double rel = std::abs(a - *numeric) / denom;
      ++res.coordinates;
      if (rel > res.max_rel_error || res.worst_param.empty()) {
        res.max_rel_error = std::max(rel, res.max_rel_error);
        res.worst_param = p.name;
        res.worst_index = i;
      }
    }
  }
  store.zero_grad();
  return res;
}

namespace {

constexpr char kMagic[8] = {'S', 'Y', 'N', 'F', 'L', 'O', 'W', 'C'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffU);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("truncated checkpoint");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

void put_string(std::ostream& out, const std::string& s) {
  put_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const std::uint32_t n = get_u32(in);
  if (n > (1u << 26)) throw Error("corrupt checkpoint string length");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw Error("truncated checkpoint");
  return s;
}

std::string read_header(std::istream& in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw Error("not a checkpoint file");
  const std::uint32_t version = get_u32(in);
  if (version != kVersion) throw Error("unsupported checkpoint version " + std::to_string(version));
  return get_string(in);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamStore& store, const std::string& metadata) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(kMagic, 8);
  put_u32(out, kVersion);
  put_string(out, metadata);
  put_u32(out, static_cast<std::uint32_t>(store.params().size()));
  for (const auto& p : store.params()) {
    put_string(out, p.name);
    put_u32(out, static_cast<std::uint32_t>(p.rows));
    put_u32(out, static_cast<std::uint32_t>(p.cols));
    for (float x : p.value) put_u32(out, std::bit_cast<std::uint32_t>(x));
  }
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

std::string load_checkpoint(const std::filesystem::path& path, ParamStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  std::string meta = read_header(in);
  const std::uint32_t count = get_u32(in);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::string name = get_string(in);
    const auto rows = static_cast<int>(get_u32(in));
    const auto cols = static_cast<int>(get_u32(in));
    if (!store.contains(name)) throw Error("checkpoint tensor " + name + " has no matching parameter");
    Param& p = store.get(name);
    if (p.rows != rows || p.cols != cols)
      throw Error("checkpoint tensor " + name + " has shape " + std::to_string(rows) + "x" + std::to_string(cols) +
                  ", expected " + std::to_string(p.rows) + "x" + std::to_string(p.cols));
    for (auto& x : p.value) x = std::bit_cast<float>(get_u32(in));
  }
  return meta;
}

std::string read_checkpoint_metadata(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  return read_header(in);
}

}  // namespace synflow::nn
