#include <array>
#include <cstring>
#include <fstream>

#include "pacbayes/prob_network.hpp"

namespace pacbayes {
namespace {

constexpr std::array<char, 8> kMagic = {'P', 'B', 'N', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("checkpoint " + path + ": truncated");
  return v;
}

void put_block(std::ofstream& out, const double* data, Index n) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

void get_block(std::ifstream& in, double* data, Index n, const std::string& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw FormatError("checkpoint " + path + ": truncated");
}

}  // namespace

// Layout (host byte order, little-endian on every supported target):
//   magic[8] version:u32 sigma0:f64 seed:u64 ndims:u64 dims:u64[ndims]
//   per layer: mu_w, rho_w (row-major out x in), mu_b, rho_b as f64
void save_checkpoint(const ProbNetwork& net, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic.data(), kMagic.size());
  put(out, kVersion);
  put(out, net.meta().sigma0);
  put(out, net.meta().seed);
  const auto dims = net.dims();
  put(out, static_cast<std::uint64_t>(dims.size()));
  for (Index d : dims) put(out, static_cast<std::uint64_t>(d));
  for (const auto& L : net.layers()) {
    put_block(out, L.mu_w.data(), L.mu_w.size());
    put_block(out, L.rho_w.data(), L.rho_w.size());
    put_block(out, L.mu_b.data(), L.mu_b.size());
    put_block(out, L.rho_b.data(), L.rho_b.size());
  }
  if (!out) throw IoError("write failed for " + path);
}

ProbNetwork load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw FormatError("checkpoint " + path + ": bad magic");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw FormatError("checkpoint " + path + ": unsupported version");
  NetworkMeta meta;
  meta.sigma0 = get<double>(in, path);
  meta.seed = get<std::uint64_t>(in, path);
  const auto ndims = get<std::uint64_t>(in, path);
  if (ndims < 2 || ndims > 64) throw FormatError("checkpoint " + path + ": implausible depth");
  std::vector<Index> dims;
  for (std::uint64_t i = 0; i < ndims; ++i) {
    const auto d = get<std::uint64_t>(in, path);
    if (d == 0 || d > (1u << 24)) throw FormatError("checkpoint " + path + ": implausible width");
    dims.push_back(static_cast<Index>(d));
  }
  std::vector<GaussianLayer<double>> layers;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    GaussianLayer<double> L;
    L.mu_w.resize(dims[l + 1], dims[l]);
    L.rho_w.resize(dims[l + 1], dims[l]);
    L.mu_b.resize(dims[l + 1]);
    L.rho_b.resize(dims[l + 1]);
    get_block(in, L.mu_w.data(), L.mu_w.size(), path);
    get_block(in, L.rho_w.data(), L.rho_w.size(), path);
    get_block(in, L.mu_b.data(), L.mu_b.size(), path);
    get_block(in, L.rho_b.data(), L.rho_b.size(), path);
    layers.push_back(std::move(L));
  }
  return ProbNetwork(std::move(layers), meta);
}

}  // namespace pacbayes
