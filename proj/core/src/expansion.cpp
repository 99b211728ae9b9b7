// Copyright 2026 The fairfed authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fairfed/expansion.hpp"

#include <algorithm>
#include <cstring>
#include <set>
#include <sstream>

#include "fairfed/errors.hpp"

namespace fairfed {

namespace {

inline std::uint64_t rotl(std::uint64_t x, int b) {
  return (x << b) | (x >> (64 - b));
}

// SipHash-2-4 over an 8-byte message (the item id). Compact special case of
// the reference implementation for fixed-length input.
std::uint64_t siphash24_u64(std::uint64_t key0, std::uint64_t key1, std::uint64_t msg) {
  std::uint64_t v0 = 0x736f6d6570736575ULL ^ key0;
  std::uint64_t v1 = 0x646f72616e646f6dULL ^ key1;
  std::uint64_t v2 = 0x6c7967656e657261ULL ^ key0;
  std::uint64_t v3 = 0x7465646279746573ULL ^ key1;

  auto round = [&] {
    v0 += v1;
    v1 = rotl(v1, 13);
    v1 ^= v0;
    v0 = rotl(v0, 32);
    v2 += v3;
    v3 = rotl(v3, 16);
    v3 ^= v2;
    v0 += v3;
    v3 = rotl(v3, 21);
    v3 ^= v0;
    v2 += v1;
    v1 = rotl(v1, 17);
    v1 ^= v2;
    v2 = rotl(v2, 32);
  };

  // 8-byte message block, then the final block carrying the length byte.
  v3 ^= msg;
  round();
  round();
  v0 ^= msg;

  const std::uint64_t b = 0x08ULL << 56;
  v3 ^= b;
  round();
  round();
  v0 ^= b;

  v2 ^= 0xff;
  round();
  round();
  round();
  round();
  return v0 ^ v1 ^ v2 ^ v3;
}

void store_le64(std::uint8_t* out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out[i] = static_cast<std::uint8_t>(v >> (8 * i));
}

}  // namespace

std::string ItemDigest::hex() const {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(32);
  for (const std::uint8_t b : bytes) {
    out.push_back(digits[b >> 4]);
    out.push_back(digits[b & 0xf]);
  }
  return out;
}

ItemCipher ItemCipher::from_seed(std::uint64_t master_seed) {
  return ItemCipher(substream_seed(master_seed, "item_cipher", 0),
                    substream_seed(master_seed, "item_cipher", 1));
}

ItemDigest ItemCipher::encrypt(ItemId item) const {
  const auto msg = static_cast<std::uint64_t>(item);
  ItemDigest digest;
  store_le64(digest.bytes.data(), siphash24_u64(key0_, key1_, msg));
  store_le64(digest.bytes.data() + 8,
             siphash24_u64(key0_ ^ 0xa5a5a5a5a5a5a5a5ULL, key1_ ^ 0x5a5a5a5a5a5a5a5aULL, msg));
  return digest;
}

std::vector<ItemDigest> ItemCipher::encrypt_items(const std::vector<ItemId>& items) const {
  std::vector<ItemDigest> digests;
  digests.reserve(items.size());
  for (const ItemId item : items) digests.push_back(encrypt(item));
  return digests;
}

std::size_t ExpansionServer::update(const std::vector<ExpansionUpload>& uploads) {
  std::size_t ignored = 0;
  for (const ExpansionUpload& upload : uploads) {
    tag_embeddings_[upload.client_tag] = upload.user_embedding;
    auto& known = tag_digests_[upload.client_tag];
    for (const ItemDigest& digest : upload.new_digests) {
      if (std::find(known.begin(), known.end(), digest) != known.end()) {
        ++ignored;
        continue;
      }
      known.push_back(digest);
      digest_uploaders_[digest].push_back(upload.client_tag);
    }
  }
  return ignored;
}

std::size_t ExpansionServer::stored_digests_for(std::uint64_t tag) const {
  const auto it = tag_digests_.find(tag);
  return it == tag_digests_.end() ? 0 : it->second.size();
}

MappingDict ExpansionServer::build_slice(std::uint64_t tag, std::size_t neighbor_cap,
                                         Rng& rng) const {
  MappingDict slice;
  const auto digests_it = tag_digests_.find(tag);
  if (digests_it == tag_digests_.end()) return slice;

  // Pass 1: reservoir-sample up to neighbor_cap distinct co-uploader tags,
  // uniformly over the union across this client's digests.
  std::set<std::uint64_t> seen;
  std::vector<std::uint64_t> reservoir;
  std::size_t distinct_seen = 0;
  for (const ItemDigest& digest : digests_it->second) {
    const auto uploaders_it = digest_uploaders_.find(digest);
    if (uploaders_it == digest_uploaders_.end()) continue;
    for (const std::uint64_t other : uploaders_it->second) {
      if (other == tag || !seen.insert(other).second) continue;
      ++distinct_seen;
      if (reservoir.size() < neighbor_cap) {
        reservoir.push_back(other);
      } else {
        const std::uint64_t slot = rng.below(distinct_seen);
        if (slot < neighbor_cap) reservoir[slot] = other;
      }
    }
  }
  const std::set<std::uint64_t> selected(reservoir.begin(), reservoir.end());

  // Pass 2: per digest, the embeddings of the selected co-uploaders.
  for (const ItemDigest& digest : digests_it->second) {
    const auto uploaders_it = digest_uploaders_.find(digest);
    std::vector<Eigen::VectorXd> embeddings;
    if (uploaders_it != digest_uploaders_.end()) {
      for (const std::uint64_t other : uploaders_it->second) {
        if (other == tag || !selected.contains(other)) continue;
        embeddings.push_back(tag_embeddings_.at(other));
      }
    }
    slice.emplace(digest, std::move(embeddings));
  }
  return slice;
}

std::string ExpansionServer::histogram_csv() const {
  std::ostringstream out;
  out << "digest,uploader_count\n";
  for (const auto& [digest, uploaders] : digest_uploaders_) {
    out << digest.hex() << ',' << uploaders.size() << '\n';
  }
  return out.str();
}

std::string ExpansionServer::debug_json() const {
  std::ostringstream out;
  out << "{\"digests\":[";
  bool first = true;
  for (const auto& [digest, uploaders] : digest_uploaders_) {
    if (!first) out << ',';
    first = false;
    out << "{\"digest\":\"" << digest.hex() << "\",\"tags\":[";
    for (std::size_t i = 0; i < uploaders.size(); ++i) {
      if (i) out << ',';
      out << "\"t" << std::hex << uploaders[i] << std::dec << "\"";
    }
    out << "]}";
  }
  out << "],\"embeddings\":[";
  first = true;
  for (const auto& [tag, emb] : tag_embeddings_) {
    if (!first) out << ',';
    first = false;
    out << "{\"tag\":\"t" << std::hex << tag << std::dec << "\",\"dim\":"
        << emb.size() << "}";
  }
  out << "]}";
  return out.str();
}

LocalSubgraph expand_subgraph(const LocalSubgraph& local, const MappingDict& slice,
                              int hidden_dim) {
  LocalSubgraph expanded = local;

  // Union over items: a neighbor co-interacting on several digests appears
  // once. Dedup is bytewise on the embedding payload.
  std::vector<Eigen::VectorXd> distinct;
  auto already_have = [&](const Eigen::VectorXd& candidate) {
    for (const Eigen::VectorXd& have : distinct) {
      if (have.size() == candidate.size() &&
          std::memcmp(have.data(), candidate.data(),
                      sizeof(double) * static_cast<std::size_t>(have.size())) == 0) {
        return true;
      }
    }
    return false;
  };

  for (const auto& [digest, embeddings] : slice) {
    for (const Eigen::VectorXd& embedding : embeddings) {
      if (embedding.size() != hidden_dim) {
        throw ProtocolError("neighbor embedding length " +
                            std::to_string(embedding.size()) + " != hidden dim " +
                            std::to_string(hidden_dim));
      }
      if (!already_have(embedding)) distinct.push_back(embedding);
    }
  }

  const auto prior = static_cast<std::size_t>(local.neighbor_embeddings.cols());
  expanded.neighbor_embeddings.resize(hidden_dim, static_cast<Eigen::Index>(prior + distinct.size()));
  if (prior > 0) expanded.neighbor_embeddings.leftCols(prior) = local.neighbor_embeddings;
  for (std::size_t i = 0; i < distinct.size(); ++i) {
    expanded.neighbor_embeddings.col(static_cast<Eigen::Index>(prior + i)) = distinct[i];
  }
  return expanded;
}

}  // namespace fairfed
