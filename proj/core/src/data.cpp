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

#include "fairfed/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "fairfed/rng.hpp"

namespace fairfed {

namespace {

std::vector<std::string> split_fields(const std::string& line,
                                      const std::string& separator) {
  std::vector<std::string> fields;
  std::size_t pos = 0;
  while (true) {
    const std::size_t next = line.find(separator, pos);
    if (next == std::string::npos) {
      fields.push_back(line.substr(pos));
      break;
    }
    fields.push_back(line.substr(pos, next - pos));
    pos = next + separator.size();
  }
  return fields;
}

std::int64_t parse_int(const std::string& field, const std::string& path,
                       std::size_t line, const char* what) {
  try {
    std::size_t consumed = 0;
    const std::int64_t value = std::stoll(field, &consumed);
    if (consumed != field.size()) throw std::invalid_argument(field);
    return value;
  } catch (const std::exception&) {
    throw ParseError(path, line, std::string("invalid ") + what + " '" + field + "'");
  }
}

double parse_real(const std::string& field, const std::string& path,
                  std::size_t line, const char* what) {
  try {
    std::size_t consumed = 0;
    const double value = std::stod(field, &consumed);
    if (consumed != field.size()) throw std::invalid_argument(field);
    return value;
  } catch (const std::exception&) {
    throw ParseError(path, line, std::string("invalid ") + what + " '" + field + "'");
  }
}

bool looks_numeric(const std::string& field) {
  if (field.empty()) return false;
  std::size_t consumed = 0;
  try {
    (void)std::stod(field, &consumed);
  } catch (const std::exception&) {
    return false;
  }
  return consumed == field.size();
}

}  // namespace

RatingTable RatingTable::from_records(std::vector<RatingRecord> records) {
  RatingTable table;
  std::sort(records.begin(), records.end(), [](const RatingRecord& a, const RatingRecord& b) {
    return std::tie(a.user, a.timestamp, a.item) < std::tie(b.user, b.timestamp, b.item);
  });

  std::unordered_set<std::uint64_t> seen_pairs;
  seen_pairs.reserve(records.size() * 2);
  for (const RatingRecord& r : records) {
    std::uint64_t key = kFnvOffset;
    key = fnv1a(key, static_cast<std::uint64_t>(r.user));
    key = fnv1a(key, static_cast<std::uint64_t>(r.item));
    if (!seen_pairs.insert(key).second) {
      throw DataError("duplicate (user,item) pair: user=" + std::to_string(r.user) +
                      " item=" + std::to_string(r.item));
    }
  }

  table.records_ = std::move(records);
  table.min_rating_ = std::numeric_limits<double>::infinity();
  table.max_rating_ = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < table.records_.size(); ++i) {
    const RatingRecord& r = table.records_[i];
    auto [it, inserted] = table.user_rows_.try_emplace(r.user, i, i + 1);
    if (!inserted) it->second.second = i + 1;
    table.item_counts_[r.item] += 1;
    table.min_rating_ = std::min(table.min_rating_, r.rating);
    table.max_rating_ = std::max(table.max_rating_, r.rating);
  }
  if (table.records_.empty()) {
    table.min_rating_ = 0.0;
    table.max_rating_ = 0.0;
  }
  return table;
}

std::vector<UserId> RatingTable::users() const {
  std::vector<UserId> out;
  out.reserve(user_rows_.size());
  for (const auto& [user, rows] : user_rows_) out.push_back(user);
  return out;
}

std::vector<ItemId> RatingTable::items() const {
  std::vector<ItemId> out;
  out.reserve(item_counts_.size());
  for (const auto& [item, count] : item_counts_) out.push_back(item);
  std::sort(out.begin(), out.end());
  return out;
}

std::span<const RatingRecord> RatingTable::user_records(UserId user) const {
  const auto it = user_rows_.find(user);
  if (it == user_rows_.end()) return {};
  return {records_.data() + it->second.first, it->second.second - it->second.first};
}

std::uint64_t RatingTable::content_hash() const {
  std::uint64_t h = kFnvOffset;
  for (const RatingRecord& r : records_) {
    h = fnv1a(h, static_cast<std::uint64_t>(r.user));
    h = fnv1a(h, static_cast<std::uint64_t>(r.item));
    h = fnv1a(h, &r.rating, sizeof(r.rating));
    h = fnv1a(h, static_cast<std::uint64_t>(r.timestamp));
  }
  return h;
}

RatingsFormat ratings_format_from_string(const std::string& name) {
  if (name == "ml100k-tab" || name == "ml-100k") return RatingsFormat::kMl100kTab;
  if (name == "ml1m-coloncolon" || name == "ml-1m") return RatingsFormat::kMl1mColonColon;
  if (name == "amazon-csv" || name == "amazon-movies") return RatingsFormat::kAmazonCsv;
  throw ConfigError("unknown ratings format '" + name + "'");
}

AmazonColumns AmazonColumns::parse(const std::string& spec) {
  const auto fields = split_fields(spec, ",");
  AmazonColumns cols{-1, -1, -1, -1};
  for (int i = 0; i < static_cast<int>(fields.size()); ++i) {
    if (fields[i] == "item") cols.item = i;
    else if (fields[i] == "user") cols.user = i;
    else if (fields[i] == "rating") cols.rating = i;
    else if (fields[i] == "timestamp") cols.timestamp = i;
    else throw ConfigError("unknown column '" + fields[i] + "' in column mapping");
  }
  if (cols.item < 0 || cols.user < 0 || cols.rating < 0 || cols.timestamp < 0) {
    throw ConfigError("column mapping must name item,user,rating,timestamp");
  }
  return cols;
}

int AmazonColumns::width() const {
  return std::max({item, user, rating, timestamp}) + 1;
}

RatingTable load_ratings(const std::filesystem::path& path, RatingsFormat format,
                         const AmazonColumns& columns) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ratings file: " + path.string());
  const std::string path_str = path.string();

  std::vector<RatingRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    RatingRecord rec;
    switch (format) {
      case RatingsFormat::kMl100kTab: {
        const auto f = split_fields(line, "\t");
        if (f.size() != 4) throw ParseError(path_str, line_no, "expected 4 tab-separated fields");
        rec.user = parse_int(f[0], path_str, line_no, "user id");
        rec.item = parse_int(f[1], path_str, line_no, "item id");
        rec.rating = parse_real(f[2], path_str, line_no, "rating");
        rec.timestamp = parse_int(f[3], path_str, line_no, "timestamp");
        break;
      }
      case RatingsFormat::kMl1mColonColon: {
        const auto f = split_fields(line, "::");
        if (f.size() != 4) throw ParseError(path_str, line_no, "expected 4 '::'-separated fields");
        rec.user = parse_int(f[0], path_str, line_no, "user id");
        rec.item = parse_int(f[1], path_str, line_no, "item id");
        rec.rating = parse_real(f[2], path_str, line_no, "rating");
        rec.timestamp = parse_int(f[3], path_str, line_no, "timestamp");
        break;
      }
      case RatingsFormat::kAmazonCsv: {
        const auto f = split_fields(line, ",");
        if (static_cast<int>(f.size()) < columns.width()) {
          throw ParseError(path_str, line_no, "expected at least " +
                           std::to_string(columns.width()) + " comma-separated fields");
        }
        // A leading header row is tolerated (and skipped) iff the rating
        // column is non-numeric there.
        if (line_no == 1 && !looks_numeric(f[columns.rating])) continue;
        rec.item = parse_int(f[columns.item], path_str, line_no, "item id");
        rec.user = parse_int(f[columns.user], path_str, line_no, "user id");
        rec.rating = parse_real(f[columns.rating], path_str, line_no, "rating");
        rec.timestamp = parse_int(f[columns.timestamp], path_str, line_no, "timestamp");
        break;
      }
    }
    if (rec.rating < 1.0 || rec.rating > 5.0) {
      throw ParseError(path_str, line_no,
                       "rating " + std::to_string(rec.rating) + " outside the 1-5 scale");
    }
    records.push_back(rec);
  }
  return RatingTable::from_records(std::move(records));
}

std::unordered_map<UserId, char> load_demographics(const std::filesystem::path& path,
                                                   DemographicsFormat format) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open demographics file: " + path.string());
  const std::string path_str = path.string();
  const std::string sep = format == DemographicsFormat::kMl100kUser ? "|" : "::";
  const std::size_t gender_field = format == DemographicsFormat::kMl100kUser ? 2 : 1;

  std::unordered_map<UserId, char> genders;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = split_fields(line, sep);
    if (f.size() <= gender_field) {
      throw ParseError(path_str, line_no, "too few fields for demographics record");
    }
    const UserId user = parse_int(f[0], path_str, line_no, "user id");
    if (f[gender_field].size() != 1 ||
        (f[gender_field][0] != 'F' && f[gender_field][0] != 'M')) {
      throw ParseError(path_str, line_no, "gender field must be 'F' or 'M', got '" +
                       f[gender_field] + "'");
    }
    genders[user] = f[gender_field][0];
  }
  return genders;
}

RatingTable ncore_filter(const RatingTable& table, std::size_t n) {
  if (n < 1) throw ConfigError("n-core filter requires n >= 1");

  std::vector<RatingRecord> records = table.records();
  // Removing a user can push an item below n and vice versa, so iterate the
  // removal pass until a fixed point.
  bool changed = true;
  while (changed && !records.empty()) {
    changed = false;
    std::unordered_map<UserId, std::size_t> user_counts;
    std::unordered_map<ItemId, std::size_t> item_counts;
    for (const RatingRecord& r : records) {
      user_counts[r.user] += 1;
      item_counts[r.item] += 1;
    }
    std::vector<RatingRecord> kept;
    kept.reserve(records.size());
    for (const RatingRecord& r : records) {
      if (user_counts[r.user] >= n && item_counts[r.item] >= n) {
        kept.push_back(r);
      } else {
        changed = true;
      }
    }
    records = std::move(kept);
  }

  if (records.empty() && !table.empty()) {
    throw EmptyResultError("n-core filter with n=" + std::to_string(n) +
                           " removed every record");
  }
  return RatingTable::from_records(std::move(records));
}

SplitTable temporal_split(const RatingTable& table, const SplitFractions& fractions) {
  if (fractions.train < 0 || fractions.validation < 0 || fractions.test < 0 ||
      std::abs(fractions.train + fractions.validation + fractions.test - 1.0) > 1e-9) {
    throw ConfigError("split fractions must be non-negative and sum to 1");
  }

  std::vector<RatingRecord> train, validation, test;
  for (const UserId user : table.users()) {
    const auto rows = table.user_records(user);  // already time-sorted
    const std::size_t c = rows.size();
    // Floor rule: test and validation get floor(fraction * c) each, train
    // keeps the remainder.
    const auto n_test = static_cast<std::size_t>(std::floor(fractions.test * static_cast<double>(c)));
    const auto n_val = static_cast<std::size_t>(std::floor(fractions.validation * static_cast<double>(c)));
    const std::size_t n_train = c - n_val - n_test;
    for (std::size_t i = 0; i < c; ++i) {
      if (i < n_train) train.push_back(rows[i]);
      else if (i < n_train + n_val) validation.push_back(rows[i]);
      else test.push_back(rows[i]);
    }
  }
  SplitTable split;
  split.train = RatingTable::from_records(std::move(train));
  split.validation = RatingTable::from_records(std::move(validation));
  split.test = RatingTable::from_records(std::move(test));
  return split;
}

SensitiveAttribute attribute_from_string(const std::string& name) {
  if (name == "gender") return SensitiveAttribute::kGender;
  if (name == "activity") return SensitiveAttribute::kActivity;
  throw ConfigError("unknown sensitive attribute '" + name + "'");
}

std::string attribute_to_string(SensitiveAttribute attribute) {
  return attribute == SensitiveAttribute::kGender ? "gender" : "activity";
}

SensitiveAssignment::SensitiveAssignment(SensitiveAttribute attribute,
                                         std::unordered_map<UserId, Group> groups)
    : attribute_(attribute), groups_(std::move(groups)) {}

Group SensitiveAssignment::group_of(UserId user) const {
  const auto it = groups_.find(user);
  if (it == groups_.end()) {
    throw DataError("user " + std::to_string(user) + " has no sensitive-group assignment");
  }
  return it->second;
}

std::size_t SensitiveAssignment::size(Group g) const {
  std::size_t n = 0;
  for (const auto& [user, group] : groups_) {
    if (group == g) ++n;
  }
  return n;
}

SensitiveAssignment assign_sensitive(const RatingTable& table,
                                     SensitiveAttribute attribute,
                                     const std::unordered_map<UserId, char>* demographics,
                                     double activity_threshold_quantile) {
  std::unordered_map<UserId, Group> groups;
  const std::vector<UserId> users = table.users();

  if (attribute == SensitiveAttribute::kGender) {
    if (demographics == nullptr) {
      throw ConfigError("gender attribute requires a demographics map");
    }
    for (const UserId user : users) {
      const auto it = demographics->find(user);
      if (it == demographics->end()) {
        throw DataError("user " + std::to_string(user) + " missing from demographics");
      }
      groups[user] = it->second == 'F' ? Group::kS0 : Group::kS1;
    }
  } else {
    if (activity_threshold_quantile <= 0.0 || activity_threshold_quantile >= 1.0) {
      throw ConfigError("activity threshold quantile must lie in (0,1)");
    }
    // Threshold = linear-interpolation quantile of the per-user train-set
    // rating counts. Active (S1) means strictly above the threshold.
    std::vector<double> counts;
    counts.reserve(users.size());
    for (const UserId user : users) {
      counts.push_back(static_cast<double>(table.user_rating_count(user)));
    }
    std::sort(counts.begin(), counts.end());
    if (counts.empty()) return SensitiveAssignment(attribute, {});
    const double pos = activity_threshold_quantile * static_cast<double>(counts.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double threshold = counts[lo] + (pos - static_cast<double>(lo)) * (counts[hi] - counts[lo]);
    for (const UserId user : users) {
      const double count = static_cast<double>(table.user_rating_count(user));
      groups[user] = count > threshold ? Group::kS1 : Group::kS0;
    }
  }
  return SensitiveAssignment(attribute, std::move(groups));
}

}  // namespace fairfed
