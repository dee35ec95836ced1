#pragma once

#include <cstdint>
#include <initializer_list>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace nameprobe {

// Binary, because the census and SSA name lists the bank is transcribed from
// only record two categories. This is a limitation of the source data, not a
// claim about gender.
enum class Gender { F, M };

enum class ProbeFlag : unsigned { grounding = 1u << 0, recovery_sentiment = 1u << 1, swap = 1u << 2 };

std::string_view to_string(Gender g);
std::string_view to_string(ProbeFlag f);
Gender parse_gender(std::string_view s);
ProbeFlag parse_probe_flag(std::string_view s);

class ProbeFlags {
 public:
  ProbeFlags() = default;
  ProbeFlags(std::initializer_list<ProbeFlag> flags) {
    for (auto f : flags) insert(f);
  }
  void insert(ProbeFlag f) { bits_ |= static_cast<unsigned>(f); }
  bool contains(ProbeFlag f) const { return (bits_ & static_cast<unsigned>(f)) != 0; }
  bool empty() const { return bits_ == 0; }
  friend bool operator==(ProbeFlags, ProbeFlags) = default;

 private:
  unsigned bits_ = 0;
};

struct NameRecord {
  std::string given_name;
  Gender gender = Gender::F;
  std::optional<std::string> media_last_name;
  std::optional<std::uint64_t> media_frequency;
  std::optional<std::uint32_t> census_rank;
  std::optional<std::string> history_last_name;
  ProbeFlags probe_flags;

  bool is_media_name() const { return media_last_name.has_value(); }
  friend bool operator==(const NameRecord&, const NameRecord&) = default;
};

// Throws ValidationError when the record breaks a field invariant.
void validate(const NameRecord& record);

// Immutable after construction; safe to share across probe workers.
class NameBank {
 public:
  NameBank() = default;
  // Validates every record and rejects duplicate given names.
  NameBank(std::vector<NameRecord> records, std::string source_path = {}, std::string checksum = {});

  const std::vector<NameRecord>& records() const { return records_; }
  const std::string& source_path() const { return source_path_; }
  const std::string& checksum() const { return checksum_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  const NameRecord* find(std::string_view given_name) const;

 private:
  std::vector<NameRecord> records_;
  std::string source_path_;
  std::string checksum_;
};

inline constexpr std::string_view kNameBankHeader =
    "given_name\tgender\tmedia_last\tmedia_freq\tcensus_rank\thistory_last\tflags";

// Parses TSV text (header line required). `source` is used for provenance only.
NameBank parse_namebank(std::string_view tsv, std::string source = "<memory>");
NameBank load_namebank(const std::filesystem::path& path);

// Canonical TSV: fixed header, one row per record in bank order, flags in
// declaration order, trailing newline.
std::string serialize_namebank(const NameBank& bank);

// Records carrying `flag`, optionally restricted to one gender. Stable order.
std::vector<NameRecord> filter_bank(const NameBank& bank, ProbeFlag flag, std::optional<Gender> gender = std::nullopt);

// Every unordered same-gender pair exactly once. Each pair is (smaller, larger)
// by given name and the list is sorted lexicographically.
std::vector<std::pair<NameRecord, NameRecord>> same_gender_pairs(const std::vector<NameRecord>& records);

}  // namespace nameprobe
