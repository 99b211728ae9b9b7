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

#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "fairfed/graph.hpp"
#include "fairfed/rng.hpp"

namespace fairfed {

// 128-bit deterministic digest of an item id under a shared key. Equal ids
// under the same key match exactly; distinct ids collide with negligible
// probability, which is all the server-side join needs.
struct ItemDigest {
  std::array<std::uint8_t, 16> bytes{};

  friend auto operator<=>(const ItemDigest&, const ItemDigest&) = default;
  std::string hex() const;
};

// Keyed PRF over item ids (SipHash-2-4, two lanes). Stands in for the
// protocol's deterministic encryption: the key is shared among clients and
// the matching logic only ever compares digests.
class ItemCipher {
 public:
  ItemCipher(std::uint64_t key0, std::uint64_t key1) : key0_(key0), key1_(key1) {}
  static ItemCipher from_seed(std::uint64_t master_seed);

  ItemDigest encrypt(ItemId item) const;
  std::vector<ItemDigest> encrypt_items(const std::vector<ItemId>& items) const;

 private:
  std::uint64_t key0_;
  std::uint64_t key1_;
};

// One round's upload from a client: a stable anonymous tag, the digests of
// items not previously uploaded (the inductive delta), and the client's
// current user embedding.
struct ExpansionUpload {
  std::uint64_t client_tag = 0;
  std::vector<ItemDigest> new_digests;
  Eigen::VectorXd user_embedding;
};

// Per-client view handed back by the server: digest -> embeddings of the
// other uploaders of that digest. Carries no ids and no tags.
using MappingDict = std::map<ItemDigest, std::vector<Eigen::VectorXd>>;

// Server-side expansion store. Digests accumulate across rounds per tag;
// embeddings are overwritten on every upload so neighbors are never stale.
// Single writer at the round barrier; slices are built against the merged
// store and read concurrently.
class ExpansionServer {
 public:
  // Merges uploads into the store. Duplicate digests within one client's
  // delta (or re-uploads of an old digest) are ignored; the count of ignored
  // entries is returned so callers can log it.
  std::size_t update(const std::vector<ExpansionUpload>& uploads);

  // Builds the mapping slice for one tag: for each of the client's digests,
  // the embeddings of all other uploaders. The distinct-neighbor set is
  // capped at `neighbor_cap` by uniform reservoir subsampling.
  MappingDict build_slice(std::uint64_t tag, std::size_t neighbor_cap, Rng& rng) const;

  std::size_t digest_count() const { return digest_uploaders_.size(); }
  std::size_t stored_digests_for(std::uint64_t tag) const;

  // digest_hex,uploader_count rows for inspection.
  std::string histogram_csv() const;
  // Full store dump used by the privacy serialization scan in tests.
  std::string debug_json() const;

 private:
  std::map<ItemDigest, std::vector<std::uint64_t>> digest_uploaders_;
  std::unordered_map<std::uint64_t, std::vector<ItemDigest>> tag_digests_;
  std::unordered_map<std::uint64_t, Eigen::VectorXd> tag_embeddings_;
};

// Attaches the slice's anonymous neighbor embeddings to the user node.
// A neighbor appearing under several digests counts once: embeddings are
// deduplicated bytewise across the whole slice. Embedding length must match
// the subgraph's hidden dimension once any neighbor is present.
LocalSubgraph expand_subgraph(const LocalSubgraph& local, const MappingDict& slice,
                              int hidden_dim);

}  // namespace fairfed
