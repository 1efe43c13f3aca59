#pragma once

// Binary parameter container. Layout (all integers little-endian):
//
//   8 bytes   magic "HMSLAB01"
//   u32       kind: 0 = base weights, 1 = adapters
//   8 x u64   ModelConfig: n_layers, n_query_heads, n_kv_heads, head_dim,
//             ffn_dim, vocab_size, max_seq_len, adapter_rank
//   u32       tensor count
//   per tensor:
//     u32 name length, name bytes (no terminator)
//     u32 rank, rank x u64 dims
//     prod(dims) x f64 values, IEEE-754 binary64, row-major
//
// Tensors appear in the for_each() order of BaseWeights / AdapterSet. See
// docs/checkpoint-format.md.

#include <filesystem>
#include <string>

#include "hmslab/model.hpp"

namespace hmslab {

std::string encode_base(const BaseWeights& w);
std::string encode_adapters(const AdapterSet& a);
BaseWeights decode_base(const std::string& bytes, const std::string& source);
AdapterSet decode_adapters(const std::string& bytes, const std::string& source);

void save_base(const std::filesystem::path& path, const BaseWeights& w);
void save_adapters(const std::filesystem::path& path, const AdapterSet& a);
BaseWeights load_base(const std::filesystem::path& path);
AdapterSet load_adapters(const std::filesystem::path& path);

}  // namespace hmslab
