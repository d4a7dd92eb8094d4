#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace simeval::store {
class RunStore;
}

namespace simeval::assessment {

inline constexpr int kQbasItems = 14;
inline constexpr int kCapabilityItems = 7;
inline constexpr int kQbasMin = 0;
inline constexpr int kQbasMax = 6;
inline constexpr int kAdequacyThreshold = 3;
inline constexpr int kLikertMin = 1;  // holistic, capabilities, authenticity, difficulty
inline constexpr int kLikertMax = 7;

struct QbasComponent {
  int index;  // 1..14
  int phase;  // 1..7
  std::string_view label;
};

/// The fourteen rated components in phase order.
const std::array<QbasComponent, kQbasItems>& qbas_components();

struct Capability {
  int index;  // 1..7
  std::string_view key;
  std::string_view label;
};

const std::array<Capability, kCapabilityItems>& capabilities();

/// Optional free-text columns, in CSV order.
const std::vector<std::string>& open_text_fields();

struct RatingForm {
  std::string session_id;
  std::string rater_id;
  std::array<std::optional<int>, kQbasItems> qbas{};
  std::optional<int> holistic;
  std::array<std::optional<int>, kCapabilityItems> capabilities{};
  std::optional<int> authenticity;
  std::optional<int> difficulty;
  std::map<std::string, std::string> open_text;

  bool qbas_complete() const;
};

struct Violation {
  std::string field;
  std::string message;
};

/// Every range and completeness problem in the form; empty when valid.
std::vector<Violation> validate_rating(const RatingForm& form);

/// Holistic rating mapped from 1..7 onto the 0..6 display scale.
double holistic_normalized(int holistic);

// Interchange format ---------------------------------------------------------

/// session_id, rater_id, qbas_1..qbas_14, holistic, cap_1..cap_7,
/// authenticity, difficulty, then the free-text columns.
const std::vector<std::string>& rating_columns();

/// Number of required leading columns (everything but free text).
std::size_t required_column_count();

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> cells;
};

/// RFC-4180 style: comma separated, double-quoted fields may contain commas,
/// quotes ("") and newlines. `line` is the 1-based line where a row starts.
std::vector<CsvRow> parse_csv(std::string_view text);
std::string csv_escape(std::string_view cell);

struct ParsedRating {
  std::size_t line = 0;
  std::optional<RatingForm> form;
  std::vector<Violation> violations;  // parse problems plus validate_rating output
};

/// Parses the ratings file body. Throws ArgumentError on a wrong header.
std::vector<ParsedRating> parse_ratings_csv(std::string_view text);
std::string ratings_to_csv(std::span<const RatingForm> forms);

nlohmann::json to_json(const RatingForm& form);
/// Same keys as the CSV columns. Non-integer scale values become violations.
RatingForm rating_from_json(const nlohmann::json& doc, std::vector<Violation>& violations);

// Rater assignment -----------------------------------------------------------

struct RaterCapacity {
  std::string rater_id;
  int min_sessions = 3;
  int max_sessions = 6;
};

struct Assignment {
  std::string rater_id;
  std::string token;
  std::vector<std::string> session_ids;
};

/// Rater ids R01..Rnn with default 3-6 capacities.
std::vector<RaterCapacity> default_raters(int count);

/// Partitions sessions across raters so each gets between its min and max.
/// Throws InfeasibleError naming the violated bound.
std::vector<Assignment> assign_sessions(std::span<const std::string> session_ids,
                                        std::span<const RaterCapacity> raters, std::uint64_t seed);

nlohmann::json to_json(const Assignment& a);
Assignment assignment_from_json(const nlohmann::json& doc);

// Ingestion ------------------------------------------------------------------

struct RejectedRow {
  std::size_t line = 0;
  std::string session_id;
  std::string kind;  // "validation" | "conflict" | "unknown_session" | "unassigned"
  std::vector<Violation> violations;
};

struct IngestReport {
  std::size_t ingested = 0;
  std::vector<RejectedRow> rejected;

  bool clean() const { return rejected.empty(); }
};

/// Outcome of admitting one form through the store's single writer.
enum class SubmitOutcome { accepted, invalid, unknown_session, unassigned, duplicate };

struct SubmitResult {
  SubmitOutcome outcome = SubmitOutcome::accepted;
  std::vector<Violation> violations;
};

/// validate_rating, existence, assignment and one-rating-per-session checks,
/// then persist. Used by both file ingestion and the HTTP service.
SubmitResult submit_rating(store::RunStore& store, const RatingForm& form);

IngestReport ingest_ratings(store::RunStore& store, std::string_view csv_text);
IngestReport ingest_ratings_file(store::RunStore& store, const std::filesystem::path& path);

}  // namespace simeval::assessment
