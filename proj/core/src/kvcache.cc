// Copyright 2026 The doublep Authors
// SPDX-License-Identifier: Apache-2.0

#include "doublep/kvcache.h"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <system_error>

#include "doublep/error.h"
#include "doublep/numerics.h"

namespace doublep {
namespace {

static_assert(std::endian::native == std::endian::little,
              "DPKV I/O assumes a little-endian host");
static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

constexpr char kMagic[4] = {'D', 'P', 'K', 'V'};

[[noreturn]] void format_error(const char* message) {
  throw Error(ErrorKind::kFormat, message);
}

void put_u32(std::vector<std::byte>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xffu));
  }
}

std::uint32_t get_u32(std::span<const std::byte> in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(in[at + i]) << (8 * i);
  }
  return v;
}

void put_floats(std::vector<std::byte>& out, std::span<const float> xs) {
  const auto* raw = reinterpret_cast<const std::byte*>(xs.data());
  out.insert(out.end(), raw, raw + xs.size_bytes());
}

void get_floats(std::span<const std::byte> in, std::size_t at,
                std::span<float> out) {
  std::memcpy(out.data(), in.data() + at, out.size_bytes());
}

std::uint32_t crc32_of(std::span<const std::byte> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for payloads above 4 GiB.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t at = 0; at < bytes.size(); at += kChunk) {
    const std::size_t n = std::min(kChunk, bytes.size() - at);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + at),
                static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

// Payload size in bytes; saturates at UINT64_MAX on overflow.
std::uint64_t payload_bytes(std::uint64_t layers, std::uint64_t kv_heads,
                            std::uint64_t q_heads, std::uint64_t d,
                            std::uint64_t n, std::uint64_t steps) {
  constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();
  auto mul = [](std::uint64_t a, std::uint64_t b) -> std::uint64_t {
    if (a != 0 && b > kMax / a) return kMax;
    return a * b;
  };
  auto add = [](std::uint64_t a, std::uint64_t b) -> std::uint64_t {
    return (a > kMax - b) ? kMax : a + b;
  };
  const std::uint64_t kv = mul(mul(mul(kv_heads, 2), n), d);
  const std::uint64_t q = mul(mul(steps, q_heads), d);
  return mul(mul(layers, add(kv, q)), 4);
}

}  // namespace

KvCache::KvCache(std::uint32_t num_layers, std::uint32_t num_kv_heads,
                 std::uint32_t head_dim, std::uint32_t context_len)
    : num_layers_(num_layers),
      num_kv_heads_(num_kv_heads),
      head_dim_(head_dim),
      context_len_(context_len) {
  Require(num_layers > 0 && num_kv_heads > 0 && head_dim > 0 &&
              context_len > 0,
          "cache dimensions must be positive");
  const std::size_t total = std::size_t{num_layers} * num_kv_heads *
                            context_len * head_dim;
  keys_.assign(total, 0.0f);
  values_.assign(total, 0.0f);
}

std::size_t KvCache::head_offset(std::size_t layer, std::size_t head) const {
  Require(layer < num_layers_ && head < num_kv_heads_,
          "layer/head out of range");
  return (layer * num_kv_heads_ + head) * std::size_t{context_len_} *
         head_dim_;
}

std::span<const float> KvCache::keys(std::size_t layer,
                                     std::size_t head) const {
  return {keys_.data() + head_offset(layer, head),
          std::size_t{context_len_} * head_dim_};
}

std::span<const float> KvCache::values(std::size_t layer,
                                       std::size_t head) const {
  return {values_.data() + head_offset(layer, head),
          std::size_t{context_len_} * head_dim_};
}

std::span<float> KvCache::mutable_keys(std::size_t layer, std::size_t head) {
  return {keys_.data() + head_offset(layer, head),
          std::size_t{context_len_} * head_dim_};
}

std::span<float> KvCache::mutable_values(std::size_t layer, std::size_t head) {
  return {values_.data() + head_offset(layer, head),
          std::size_t{context_len_} * head_dim_};
}

std::span<const float> KvCache::key(std::size_t layer, std::size_t head,
                                    std::size_t token) const {
  Require(token < context_len_, "token out of range");
  return keys(layer, head).subspan(token * head_dim_, head_dim_);
}

std::span<const float> KvCache::value(std::size_t layer, std::size_t head,
                                      std::size_t token) const {
  Require(token < context_len_, "token out of range");
  return values(layer, head).subspan(token * head_dim_, head_dim_);
}

void KvCache::validate() const {
  Require(num_layers_ > 0 && num_kv_heads_ > 0 && head_dim_ > 0 &&
              context_len_ > 0,
          "cache dimensions must be positive");
  Require(keys_.size() == values_.size(), "key/value shape mismatch");
  Require(all_finite(keys_) && all_finite(values_),
          "cache contains non-finite entries");
}

QueryTrace::QueryTrace(std::uint32_t num_layers, std::uint32_t num_query_heads,
                       std::uint32_t gqa_group, std::uint32_t head_dim,
                       std::uint32_t num_steps)
    : num_layers_(num_layers),
      num_query_heads_(num_query_heads),
      gqa_group_(gqa_group),
      head_dim_(head_dim),
      num_steps_(num_steps) {
  Require(num_layers > 0 && num_query_heads > 0 && gqa_group > 0 &&
              head_dim > 0,
          "trace dimensions must be positive");
  Require(num_query_heads % gqa_group == 0,
          "query heads must be a multiple of the GQA group");
  queries_.assign(
      std::size_t{num_layers} * num_steps * num_query_heads * head_dim, 0.0f);
}

std::size_t QueryTrace::offset(std::size_t layer, std::size_t step,
                               std::size_t query_head) const {
  Require(layer < num_layers_ && step < num_steps_ &&
              query_head < num_query_heads_,
          "query index out of range");
  return ((layer * num_steps_ + step) * num_query_heads_ + query_head) *
         std::size_t{head_dim_};
}

std::span<const float> QueryTrace::query(std::size_t layer, std::size_t step,
                                         std::size_t query_head) const {
  return {queries_.data() + offset(layer, step, query_head), head_dim_};
}

std::span<float> QueryTrace::mutable_query(std::size_t layer, std::size_t step,
                                           std::size_t query_head) {
  return {queries_.data() + offset(layer, step, query_head), head_dim_};
}

void QueryTrace::validate(const KvCache& cache) const {
  Require(num_layers_ == cache.num_layers(), "trace/cache layer mismatch");
  Require(head_dim_ == cache.head_dim(), "trace/cache head_dim mismatch");
  Require(num_query_heads_ ==
              std::uint64_t{cache.num_kv_heads()} * gqa_group_,
          "num_query_heads must equal num_kv_heads x gqa_group");
  Require(all_finite(queries_), "trace contains non-finite entries");
}

std::vector<std::byte> encode_dump(const KvCache& cache,
                                   const QueryTrace& trace) {
  cache.validate();
  trace.validate(cache);

  const std::uint64_t payload = payload_bytes(
      cache.num_layers(), cache.num_kv_heads(), trace.num_query_heads(),
      cache.head_dim(), cache.context_len(), trace.num_steps());

  std::vector<std::byte> out;
  out.reserve(kDumpHeaderBytes + payload + 4);
  for (char c : kMagic) out.push_back(static_cast<std::byte>(c));
  put_u32(out, kDumpVersion);
  put_u32(out, cache.num_layers());
  put_u32(out, cache.num_kv_heads());
  put_u32(out, trace.num_query_heads());
  put_u32(out, cache.head_dim());
  put_u32(out, cache.context_len());
  put_u32(out, trace.num_steps());

  for (std::uint32_t layer = 0; layer < cache.num_layers(); ++layer) {
    for (std::uint32_t head = 0; head < cache.num_kv_heads(); ++head) {
      put_floats(out, cache.keys(layer, head));
      put_floats(out, cache.values(layer, head));
    }
    for (std::uint32_t step = 0; step < trace.num_steps(); ++step) {
      for (std::uint32_t h = 0; h < trace.num_query_heads(); ++h) {
        put_floats(out, trace.query(layer, step, h));
      }
    }
  }
  put_u32(out, crc32_of(std::span(out).subspan(kDumpHeaderBytes)));
  return out;
}

std::pair<KvCache, QueryTrace> decode_dump(std::span<const std::byte> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    format_error("not a DPKV file");
  }
  if (bytes.size() < 8) format_error("truncated file");
  if (get_u32(bytes, 4) != kDumpVersion) format_error("unsupported version");
  if (bytes.size() < kDumpHeaderBytes + 4) format_error("truncated file");

  const std::uint32_t layers = get_u32(bytes, 8);
  const std::uint32_t kv_heads = get_u32(bytes, 12);
  const std::uint32_t q_heads = get_u32(bytes, 16);
  const std::uint32_t d = get_u32(bytes, 20);
  const std::uint32_t n = get_u32(bytes, 24);
  const std::uint32_t steps = get_u32(bytes, 28);

  if (layers == 0 || kv_heads == 0 || q_heads == 0 || d == 0 || n == 0 ||
      q_heads % kv_heads != 0) {
    format_error("invalid header");
  }
  const std::uint64_t payload =
      payload_bytes(layers, kv_heads, q_heads, d, n, steps);
  const std::uint64_t available = bytes.size() - kDumpHeaderBytes - 4;
  if (payload > available) format_error("truncated file");
  if (payload < available) format_error("trailing bytes after payload");
  const auto payload_span = bytes.subspan(kDumpHeaderBytes, payload);
  if (crc32_of(payload_span) != get_u32(bytes, kDumpHeaderBytes + payload)) {
    format_error("corrupt payload");
  }

  KvCache cache(layers, kv_heads, d, n);
  QueryTrace trace(layers, q_heads, q_heads / kv_heads, d, steps);
  std::size_t at = kDumpHeaderBytes;
  for (std::uint32_t layer = 0; layer < layers; ++layer) {
    for (std::uint32_t head = 0; head < kv_heads; ++head) {
      auto k = cache.mutable_keys(layer, head);
      get_floats(bytes, at, k);
      at += k.size_bytes();
      auto v = cache.mutable_values(layer, head);
      get_floats(bytes, at, v);
      at += v.size_bytes();
    }
    for (std::uint32_t step = 0; step < steps; ++step) {
      for (std::uint32_t h = 0; h < q_heads; ++h) {
        auto q = trace.mutable_query(layer, step, h);
        get_floats(bytes, at, q);
        at += q.size_bytes();
      }
    }
  }
  try {
    cache.validate();
    trace.validate(cache);
  } catch (const Error& e) {
    throw Error(ErrorKind::kFormat, e.what());
  }
  return {std::move(cache), std::move(trace)};
}

void write_dump(const KvCache& cache, const QueryTrace& trace,
                const std::filesystem::path& path) {
  const std::vector<std::byte> bytes = encode_dump(cache, trace);
  std::filesystem::path staging = path;
  staging += ".partial";
  {
    std::ofstream out(staging, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error(ErrorKind::kIo, "cannot open for writing: " + path.string());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) {
      std::error_code ignored;
      std::filesystem::remove(staging, ignored);
      throw Error(ErrorKind::kIo, "write failed: " + path.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(staging, path, ec);
  if (ec) {
    std::filesystem::remove(staging, ec);
    throw Error(ErrorKind::kIo, "cannot write: " + path.string());
  }
}

std::pair<KvCache, QueryTrace> read_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open: " + path.string());
  std::vector<char> raw((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::kIo, "read failed: " + path.string());
  return decode_dump(std::as_bytes(std::span(raw)));
}

}  // namespace doublep
