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

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "fairfed/errors.hpp"

namespace fairfed {

using UserId = std::int64_t;
using ItemId = std::int64_t;

struct RatingRecord {
  UserId user = 0;
  ItemId item = 0;
  double rating = 0.0;
  std::int64_t timestamp = 0;

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

// Columnar-ish immutable store of rating records. Records are kept sorted by
// (user, timestamp, item) so per-user slices are contiguous; duplicate
// (user, item) pairs are rejected at construction.
class RatingTable {
 public:
  RatingTable() = default;
  static RatingTable from_records(std::vector<RatingRecord> records);

  const std::vector<RatingRecord>& records() const { return records_; }
  std::size_t rating_count() const { return records_.size(); }
  std::size_t user_count() const { return user_rows_.size(); }
  std::size_t item_count() const { return item_counts_.size(); }
  bool empty() const { return records_.empty(); }

  std::vector<UserId> users() const;
  std::vector<ItemId> items() const;

  // Contiguous slice of this user's records (empty if unknown user).
  std::span<const RatingRecord> user_records(UserId user) const;

  std::size_t user_rating_count(UserId user) const {
    return user_records(user).size();
  }
  const std::unordered_map<ItemId, std::size_t>& item_rating_counts() const {
    return item_counts_;
  }

  double min_rating() const { return min_rating_; }
  double max_rating() const { return max_rating_; }

  // FNV-1a over the sorted records; used as the dataset fingerprint.
  std::uint64_t content_hash() const;

 private:
  std::vector<RatingRecord> records_;
  std::map<UserId, std::pair<std::size_t, std::size_t>> user_rows_;  // [begin,end)
  std::unordered_map<ItemId, std::size_t> item_counts_;
  double min_rating_ = 0.0;
  double max_rating_ = 0.0;
};

enum class RatingsFormat { kMl100kTab, kMl1mColonColon, kAmazonCsv };

RatingsFormat ratings_format_from_string(const std::string& name);

// Column order for the Amazon CSV reader; defaults to the layout documented
// in the README (item,user,rating,timestamp).
struct AmazonColumns {
  int item = 0;
  int user = 1;
  int rating = 2;
  int timestamp = 3;

  static AmazonColumns parse(const std::string& spec);
  int width() const;
};

RatingTable load_ratings(const std::filesystem::path& path, RatingsFormat format,
                         const AmazonColumns& columns = AmazonColumns{});

// Demographics source for the gender attribute: ML-100K u.user (pipe
// separated, gender at field 2) or ML-1M users.dat ("::", gender at field 1).
enum class DemographicsFormat { kMl100kUser, kMl1mUsers };

std::unordered_map<UserId, char> load_demographics(
    const std::filesystem::path& path, DemographicsFormat format);

// Iterative n-core filter: removes users/items with fewer than n records
// until a fixed point. Throws EmptyResultError if nothing survives.
RatingTable ncore_filter(const RatingTable& table, std::size_t n);

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Per-user chronological partition. Views partition each user's records and
// every train timestamp <= validation timestamps <= test timestamps.
struct SplitTable {
  RatingTable train;
  RatingTable validation;
  RatingTable test;
};

SplitTable temporal_split(const RatingTable& table,
                          const SplitFractions& fractions = SplitFractions{});

enum class Group : std::uint8_t { kS0 = 0, kS1 = 1 };

inline const char* group_name(Group g) { return g == Group::kS0 ? "S0" : "S1"; }

enum class SensitiveAttribute { kGender, kActivity };

SensitiveAttribute attribute_from_string(const std::string& name);
std::string attribute_to_string(SensitiveAttribute attribute);

// Total map user -> {S0, S1} for the filtered population.
class SensitiveAssignment {
 public:
  SensitiveAssignment() = default;
  SensitiveAssignment(SensitiveAttribute attribute,
                      std::unordered_map<UserId, Group> groups);

  SensitiveAttribute attribute() const { return attribute_; }
  Group group_of(UserId user) const;
  const std::unordered_map<UserId, Group>& groups() const { return groups_; }
  std::size_t size(Group g) const;

 private:
  SensitiveAttribute attribute_ = SensitiveAttribute::kActivity;
  std::unordered_map<UserId, Group> groups_;
};

// Gender: S0 = female, S1 = male (fixed convention; the disparity measure is
// symmetric under a swap). Activity: S1 = users whose train-set rating count
// exceeds the population quantile threshold.
SensitiveAssignment assign_sensitive(
    const RatingTable& table, SensitiveAttribute attribute,
    const std::unordered_map<UserId, char>* demographics = nullptr,
    double activity_threshold_quantile = 0.5);

}  // namespace fairfed
