#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "saferl/core/errors.hpp"
#include "saferl/core/param_store.hpp"

namespace saferl::nn {

// Checkpoint = <stem>.manifest (text: name, shape, offset per parameter) plus
// <stem>.bin (flat little-endian float64 payload). Round-trips are bit exact.

inline void write_f64_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char raw[8];
  for (int i = 0; i < 8; ++i) raw[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(raw, 8);
}

inline double read_f64_le(std::istream& in) {
  char raw[8];
  in.read(raw, 8);
  if (!in) throw ValidationError("checkpoint payload truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(raw[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline void save_checkpoint(const ParamStore& store, const std::string& stem) {
  std::ofstream manifest(stem + ".manifest");
  std::ofstream bin(stem + ".bin", std::ios::binary);
  if (!manifest || !bin) throw ValidationError("cannot open checkpoint files for writing: " + stem);
  manifest << "saferl-checkpoint 1\n";
  std::size_t offset = 0;
  for (const std::string& name : store.names()) {
    const Tensor& p = store.param(name);
    manifest << "param " << name << " " << p.rank();
    for (std::size_t d : p.shape) manifest << " " << d;
    manifest << " " << offset << "\n";
    for (double v : p.data) write_f64_le(bin, v);
    offset += p.size();
  }
  if (!manifest || !bin) throw ValidationError("checkpoint write failed: " + stem);
}

inline void load_checkpoint(ParamStore& store, const std::string& stem) {
  std::ifstream manifest(stem + ".manifest");
  if (!manifest) throw ValidationError("cannot open checkpoint manifest: " + stem + ".manifest");
  std::ifstream bin(stem + ".bin", std::ios::binary);
  if (!bin) throw ValidationError("cannot open checkpoint payload: " + stem + ".bin");

  std::string header;
  std::getline(manifest, header);
  if (header != "saferl-checkpoint 1") throw ValidationError("unrecognized checkpoint header: " + header);

  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tag, name;
    std::size_t rank = 0;
    ls >> tag >> name >> rank;
    if (tag != "param" || !ls) throw ValidationError("malformed checkpoint manifest line: " + line);
    std::vector<std::size_t> shape(rank);
    for (std::size_t i = 0; i < rank; ++i) ls >> shape[i];
    std::size_t offset = 0;
    ls >> offset;
    if (!ls) throw ValidationError("malformed checkpoint manifest line: " + line);

    std::size_t n = Tensor::count(shape);
    bin.seekg(static_cast<std::streamoff>(offset * 8), std::ios::beg);
    Tensor t = Tensor::zeros(shape);
    for (std::size_t i = 0; i < n; ++i) t[i] = read_f64_le(bin);
    if (store.has(name)) {
      Tensor& dst = store.param(name);
      if (dst.shape != shape) {
        throw ValidationError("checkpoint shape mismatch for " + name + ": file " + shape_string(shape) +
                              " vs store " + shape_string(dst.shape));
      }
      dst = std::move(t);
    } else {
      store.add(name, std::move(t));
    }
  }
}

}  // namespace saferl::nn
