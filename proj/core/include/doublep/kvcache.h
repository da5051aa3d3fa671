// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

namespace doublep {

// Dense per-(layer, kv-head) key/value matrices, each context_len x head_dim,
// row-major. Storage is laid out [layer][kv_head][token][dim].
class KvCache {
 public:
  KvCache() = default;
  KvCache(std::uint32_t num_layers, std::uint32_t num_kv_heads,
          std::uint32_t head_dim, std::uint32_t context_len);

  std::uint32_t num_layers() const { return num_layers_; }
  std::uint32_t num_kv_heads() const { return num_kv_heads_; }
  std::uint32_t head_dim() const { return head_dim_; }
  std::uint32_t context_len() const { return context_len_; }

  std::span<const float> keys(std::size_t layer, std::size_t head) const;
  std::span<const float> values(std::size_t layer, std::size_t head) const;
  std::span<float> mutable_keys(std::size_t layer, std::size_t head);
  std::span<float> mutable_values(std::size_t layer, std::size_t head);

  std::span<const float> key(std::size_t layer, std::size_t head,
                             std::size_t token) const;
  std::span<const float> value(std::size_t layer, std::size_t head,
                               std::size_t token) const;

  // Throws if any dimension is zero or any entry is non-finite.
  void validate() const;

  friend bool operator==(const KvCache&, const KvCache&) = default;

 private:
  std::size_t head_offset(std::size_t layer, std::size_t head) const;

  std::uint32_t num_layers_ = 0;
  std::uint32_t num_kv_heads_ = 0;
  std::uint32_t head_dim_ = 0;
  std::uint32_t context_len_ = 0;
  std::vector<float> keys_;
  std::vector<float> values_;
};

// Decode-step queries, laid out [layer][step][query_head][dim]. Query head h
// reads kv head h / gqa_group.
class QueryTrace {
 public:
  QueryTrace() = default;
  QueryTrace(std::uint32_t num_layers, std::uint32_t num_query_heads,
             std::uint32_t gqa_group, std::uint32_t head_dim,
             std::uint32_t num_steps);

  std::uint32_t num_layers() const { return num_layers_; }
  std::uint32_t num_query_heads() const { return num_query_heads_; }
  std::uint32_t gqa_group() const { return gqa_group_; }
  std::uint32_t head_dim() const { return head_dim_; }
  std::uint32_t num_steps() const { return num_steps_; }

  std::uint32_t kv_head_for(std::uint32_t query_head) const {
    return query_head / gqa_group_;
  }

  std::span<const float> query(std::size_t layer, std::size_t step,
                               std::size_t query_head) const;
  std::span<float> mutable_query(std::size_t layer, std::size_t step,
                                 std::size_t query_head);

  // Checks the trace against the cache it will be replayed on.
  void validate(const KvCache& cache) const;

  friend bool operator==(const QueryTrace&, const QueryTrace&) = default;

 private:
  std::size_t offset(std::size_t layer, std::size_t step,
                     std::size_t query_head) const;

  std::uint32_t num_layers_ = 0;
  std::uint32_t num_query_heads_ = 0;
  std::uint32_t gqa_group_ = 1;
  std::uint32_t head_dim_ = 0;
  std::uint32_t num_steps_ = 0;
  std::vector<float> queries_;
};

// DPKV binary dump, little-endian throughout:
//
//   magic        "DPKV"
//   version      u32 = 1
//   header       num_layers, num_kv_heads, num_query_heads, head_dim,
//                context_len, num_steps (u32 each)
//   payload      for each layer:
//                  for each kv head: keys (N x d f32), values (N x d f32)
//                  for each step, for each query head: query (d f32)
//   trailer      CRC-32 (IEEE) of the payload bytes, u32
inline constexpr std::uint32_t kDumpVersion = 1;
inline constexpr std::size_t kDumpHeaderBytes = 4 + 4 + 6 * 4;

// Serializes into an in-memory buffer. Identical inputs give identical bytes.
std::vector<std::byte> encode_dump(const KvCache& cache,
                                   const QueryTrace& trace);
std::pair<KvCache, QueryTrace> decode_dump(std::span<const std::byte> bytes);

// Writes atomically: the file is staged next to `path` and renamed, so a
// failed write leaves no partial file behind.
void write_dump(const KvCache& cache, const QueryTrace& trace,
                const std::filesystem::path& path);
std::pair<KvCache, QueryTrace> read_dump(const std::filesystem::path& path);

}  // namespace doublep
