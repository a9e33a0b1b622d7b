#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <iterator>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "deblur/error.hpp"
#include "deblur/nn.hpp"
#include "deblur/rng.hpp"

// CKPT1 layout:
//   CKPT1\n
//   <layer count> global_residual=<0|1>\n
//   per layer: <kind> <key>=<value>... params=<len>,<len>|-\n
//   blob <byte count>\n
//   <little-endian float32 parameter values, layer order>
//   <FNV-1a 64 of the blob bytes, little-endian>

namespace deblur::nn {

namespace detail {

inline std::string format_hyper(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64_le(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

}  // namespace detail

template <typename T>
void write_checkpoint(std::ostream& os, const Network<T>& net) {
  std::string header = "CKPT1\n";
  header += std::to_string(net.size()) + " global_residual=" + (net.global_residual() ? "1" : "0") + "\n";
  std::string blob;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer<T>& layer = net.layer(i);
    header += kind_name(layer.kind());
    for (const auto& [key, value] : layer.hyper()) header += " " + key + "=" + detail::format_hyper(value);
    header += " params=";
    const auto ps = layer.params();
    if (ps.empty()) header += "-";
    for (std::size_t j = 0; j < ps.size(); ++j) {
      if (j) header += ",";
      header += std::to_string(ps[j]->size());
      for (T v : ps[j]->value) detail::put_u32_le(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    header += "\n";
  }
  header += "blob " + std::to_string(blob.size()) + "\n";
  std::uint64_t sum = fnv1a64(blob);
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  os.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  char tail[8];
  for (int i = 0; i < 8; ++i) tail[i] = static_cast<char>((sum >> (8 * i)) & 0xFF);
  os.write(tail, 8);
}

template <typename T>
Network<T> read_checkpoint(std::istream& is) {
  auto line = [&](const char* what) {
    std::string l;
    if (!std::getline(is, l)) throw FormatError(std::string("CKPT1: missing ") + what);
    return l;
  };
  if (line("magic") != "CKPT1") throw FormatError("CKPT1: bad magic");

  std::istringstream counts(line("layer count"));
  std::size_t n_layers = 0;
  std::string residual;
  if (!(counts >> n_layers >> residual) ||
      (residual != "global_residual=0" && residual != "global_residual=1"))
    throw FormatError("CKPT1: bad layer count line");

  Network<T> net;
  net.set_global_residual(residual == "global_residual=1");
  std::vector<std::vector<std::size_t>> lengths;
  for (std::size_t i = 0; i < n_layers; ++i) {
    std::istringstream ls(line("layer line"));
    std::string kind;
    ls >> kind;
    std::map<std::string, double> hyper;
    std::vector<std::size_t> lens;
    std::string tok;
    while (ls >> tok) {
      const auto eq = tok.find('=');
      if (eq == std::string::npos) throw FormatError("CKPT1: bad token '" + tok + "'");
      const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
      try {
        if (key == "params") {
          if (value != "-") {
            std::stringstream vs(value);
            std::string part;
            while (std::getline(vs, part, ',')) lens.push_back(std::stoull(part));
          }
        } else {
          hyper[key] = std::stod(value);
        }
      } catch (const std::logic_error&) {
        throw FormatError("CKPT1: bad value in '" + tok + "'");
      }
    }
    net.add(make_layer<T>(kind_from_name(kind), hyper));
    lengths.push_back(std::move(lens));
  }

  std::istringstream bl(line("blob line"));
  std::string word;
  std::size_t blob_size = 0;
  if (!(bl >> word >> blob_size) || word != "blob") throw FormatError("CKPT1: bad blob line");
  std::string blob(blob_size, '\0');
  unsigned char tail[8];
  if (!is.read(blob.data(), static_cast<std::streamsize>(blob_size)) ||
      !is.read(reinterpret_cast<char*>(tail), 8))
    throw CorruptCheckpointError("CKPT1: truncated blob");
  if (is.peek() != std::char_traits<char>::eof()) throw CorruptCheckpointError("CKPT1: trailing bytes");
  if (detail::get_u64_le(tail) != fnv1a64(blob)) throw CorruptCheckpointError("CKPT1: checksum mismatch");

  std::size_t offset = 0;
  for (std::size_t i = 0; i < net.size(); ++i) {
    auto ps = net.layer(i).params();
    if (ps.size() != lengths[i].size()) throw FormatError("CKPT1: parameter array count mismatch");
    for (std::size_t j = 0; j < ps.size(); ++j) {
      if (ps[j]->size() != lengths[i][j]) throw FormatError("CKPT1: parameter length mismatch");
      for (T& v : ps[j]->value) {
        if (offset + 4 > blob.size()) throw FormatError("CKPT1: blob shorter than declared parameters");
        std::uint32_t bits = 0;
        for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(blob[offset + b]);
        v = static_cast<T>(std::bit_cast<float>(bits));
        offset += 4;
      }
    }
  }
  if (offset != blob.size()) throw FormatError("CKPT1: blob longer than declared parameters");
  return net;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Network<T>& net) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot write " + path.string());
  write_checkpoint(os, net);
}

template <typename T>
Network<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint " + path.string());
  return read_checkpoint<T>(is);
}

}  // namespace deblur::nn
