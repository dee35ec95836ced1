#include "nameprobe/namebank.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "nameprobe/digest.hpp"
#include "nameprobe/errors.hpp"

namespace nameprobe {

namespace {

constexpr ProbeFlag kAllFlags[] = {ProbeFlag::grounding, ProbeFlag::recovery_sentiment, ProbeFlag::swap};

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename T>
std::optional<T> parse_optional_uint(std::string_view field, std::string_view column, std::size_t line) {
  if (field.empty()) return std::nullopt;
  T value{};
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError("column " + std::string(column) + ": not a non-negative integer: '" + std::string(field) + "'",
                     line);
  }
  return value;
}

std::optional<std::string> optional_string(std::string_view field) {
  if (field.empty()) return std::nullopt;
  return std::string(field);
}

}  // namespace

std::string_view to_string(Gender g) { return g == Gender::F ? "F" : "M"; }

std::string_view to_string(ProbeFlag f) {
  switch (f) {
    case ProbeFlag::grounding:
      return "grounding";
    case ProbeFlag::recovery_sentiment:
      return "recovery_sentiment";
    case ProbeFlag::swap:
      return "swap";
  }
  return "?";
}

Gender parse_gender(std::string_view s) {
  if (s == "F") return Gender::F;
  if (s == "M") return Gender::M;
  throw ValidationError("unknown gender '" + std::string(s) + "' (expected F or M)");
}

ProbeFlag parse_probe_flag(std::string_view s) {
  for (auto f : kAllFlags) {
    if (to_string(f) == s) return f;
  }
  throw ValidationError("unknown probe flag '" + std::string(s) + "'");
}

void validate(const NameRecord& r) {
  if (r.given_name.empty()) throw ValidationError("given_name is empty");
  if (r.probe_flags.contains(ProbeFlag::grounding) && !r.media_last_name && !r.history_last_name) {
    throw ValidationError(r.given_name + ": grounding flag requires a media or history last name");
  }
  if (r.media_frequency && !r.media_last_name) {
    throw ValidationError(r.given_name + ": media_freq given without media_last");
  }
  if (r.census_rank && *r.census_rank == 0) {
    throw ValidationError(r.given_name + ": census_rank must be positive");
  }
  if ((r.media_last_name && r.media_last_name->empty()) || (r.history_last_name && r.history_last_name->empty())) {
    throw ValidationError(r.given_name + ": empty surname");
  }
}

NameBank::NameBank(std::vector<NameRecord> records, std::string source_path, std::string checksum)
    : records_(std::move(records)), source_path_(std::move(source_path)), checksum_(std::move(checksum)) {
  std::unordered_set<std::string> seen;
  for (const auto& r : records_) {
    validate(r);
    if (!seen.insert(r.given_name).second) throw ValidationError("duplicate given_name '" + r.given_name + "'");
  }
}

const NameRecord* NameBank::find(std::string_view given_name) const {
  for (const auto& r : records_) {
    if (r.given_name == given_name) return &r;
  }
  return nullptr;
}

NameBank parse_namebank(std::string_view tsv, std::string source) {
  std::vector<NameRecord> records;
  std::unordered_set<std::string> seen;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t start = 0;
  while (start < tsv.size()) {
    std::size_t end = tsv.find('\n', start);
    if (end == std::string_view::npos) end = tsv.size();
    std::string_view line = tsv.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (!header_seen) {
      if (line != kNameBankHeader) throw ParseError("missing or malformed header", line_no);
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 7) {
      throw ParseError("expected 7 tab-separated fields, got " + std::to_string(fields.size()), line_no);
    }
    NameRecord r;
    r.given_name = std::string(fields[0]);
    try {
      r.gender = parse_gender(fields[1]);
      r.media_last_name = optional_string(fields[2]);
      r.media_frequency = parse_optional_uint<std::uint64_t>(fields[3], "media_freq", line_no);
      r.census_rank = parse_optional_uint<std::uint32_t>(fields[4], "census_rank", line_no);
      r.history_last_name = optional_string(fields[5]);
      if (!fields[6].empty()) {
        for (auto flag : split(fields[6], ',')) r.probe_flags.insert(parse_probe_flag(flag));
      }
      validate(r);
    } catch (const ParseError&) {
      throw;
    } catch (const ValidationError& e) {
      throw ParseError(e.what(), line_no);
    }
    if (!seen.insert(r.given_name).second) {
      throw ParseError("duplicate given_name '" + r.given_name + "'", line_no);
    }
    records.push_back(std::move(r));
  }
  if (!header_seen) throw ParseError("empty name-bank file", 1);
  return NameBank(std::move(records), std::move(source), sha256_hex(tsv));
}

NameBank load_namebank(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open name bank '" + path.string() + "'", 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_namebank(buf.str(), path.string());
}

std::string serialize_namebank(const NameBank& bank) {
  std::string out(kNameBankHeader);
  out += '\n';
  for (const auto& r : bank.records()) {
    out += r.given_name;
    out += '\t';
    out += to_string(r.gender);
    out += '\t';
    out += r.media_last_name.value_or("");
    out += '\t';
    if (r.media_frequency) out += std::to_string(*r.media_frequency);
    out += '\t';
    if (r.census_rank) out += std::to_string(*r.census_rank);
    out += '\t';
    out += r.history_last_name.value_or("");
    out += '\t';
    bool first = true;
    for (auto f : kAllFlags) {
      if (!r.probe_flags.contains(f)) continue;
      if (!first) out += ',';
      out += to_string(f);
      first = false;
    }
    out += '\n';
  }
  return out;
}

std::vector<NameRecord> filter_bank(const NameBank& bank, ProbeFlag flag, std::optional<Gender> gender) {
  std::vector<NameRecord> out;
  for (const auto& r : bank.records()) {
    if (!r.probe_flags.contains(flag)) continue;
    if (gender && r.gender != *gender) continue;
    out.push_back(r);
  }
  return out;
}

std::vector<std::pair<NameRecord, NameRecord>> same_gender_pairs(const std::vector<NameRecord>& records) {
  std::vector<const NameRecord*> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(),
            [](const NameRecord* a, const NameRecord* b) { return a->given_name < b->given_name; });
  std::vector<std::pair<NameRecord, NameRecord>> pairs;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    for (std::size_t j = i + 1; j < sorted.size(); ++j) {
      if (sorted[i]->gender != sorted[j]->gender) continue;
      if (sorted[i]->given_name == sorted[j]->given_name) continue;
      pairs.emplace_back(*sorted[i], *sorted[j]);
    }
  }
  return pairs;
}

}  // namespace nameprobe
