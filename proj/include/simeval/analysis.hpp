#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "simeval/assessment.hpp"
#include "simeval/orchestrator.hpp"
#include "simeval/persona.hpp"
#include "simeval/reml.hpp"
#include "simeval/stats.hpp"

namespace simeval::analysis {

// Descriptives ---------------------------------------------------------------

struct ComponentStats {
  int index = 0;
  int phase = 0;
  std::string label;
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t adequacy_count = 0;
  double adequacy_rate = 0.0;  // adequacy_count / n
};

/// Per-component mean, SD and share of sessions scoring at least 3.
/// Missing items are left out of that component's n.
std::vector<ComponentStats> component_descriptives(std::span<const assessment::RatingForm> ratings);

/// Mean of the fourteen items on the 0-6 scale. Throws ArgumentError for an
/// incomplete form.
double session_qbas_mean(const assessment::RatingForm& rating);

struct ScaleStats {
  std::string key;
  std::string label;
  std::size_t n = 0;
  double mean = 0.0;
  double sd = 0.0;
  double median = 0.0;
  double iqr = 0.0;
};

/// Q-BAS session mean, holistic item (raw 1-7 and rescaled 0-6), the seven
/// capabilities, authenticity and difficulty.
std::vector<ScaleStats> scale_descriptives(std::span<const assessment::RatingForm> ratings);

// Characteristic comparisons ---------------------------------------------------

struct RatedSession {
  std::string session_id;
  assessment::RatingForm rating;
  std::map<std::string, std::string> levels;  // persona dimension -> level
};

/// Attaches each rating to the persona levels of the user in its session.
/// Ratings whose session or user is unknown keep an empty level map.
std::vector<RatedSession> join_ratings(std::span<const assessment::RatingForm> ratings,
                                       std::span<const orchestrator::Transcript> transcripts,
                                       std::span<const persona::ArtificialUser> users);

struct Characteristic {
  std::string key;
  std::string label;
  std::vector<std::string> levels;
};

/// Severity, age group, gender and every appended dimension of the matrix,
/// with the levels the matrix can produce.
std::vector<Characteristic> default_characteristics(const persona::PersonaMatrix& matrix);

enum class OutcomeFamily {
  rank,   // Wilcoxon / Kruskal-Wallis, summarized as median (IQR)
  welch,  // Welch t / Welch ANOVA, summarized as mean (SD)
};

struct Outcome {
  std::string key;
  std::string label;
  OutcomeFamily family;
};

const std::vector<Outcome>& comparison_outcomes();
std::optional<double> outcome_value(const assessment::RatingForm& rating, const std::string& key);

struct SubgroupRow {
  std::string level;
  std::string label;
  std::size_t n = 0;
  std::string summary;  // "5.00 (2.00)"; "not computable" when n is too small
  bool computable = true;
};

struct CharacteristicResult {
  std::string key;
  std::string label;
  std::vector<SubgroupRow> subgroups;
  std::optional<stats::StatResult> result;
  std::string statistic_text;  // "W=231.50", "H(2)=2.54", "t(45.96)=-2.70", "F(2,29.09)=0.43"
  std::string p_text;
  bool computable = false;
  std::string note;
};

struct ComparisonTable {
  Outcome outcome;
  std::string summary_heading;
  std::vector<CharacteristicResult> rows;
  std::string footnote;
};

ComparisonTable characteristic_comparison(std::span<const RatedSession> sessions,
                                          std::span<const Characteristic> characteristics,
                                          const Outcome& outcome);
std::vector<ComparisonTable> characteristic_comparisons(std::span<const RatedSession> sessions,
                                                        std::span<const Characteristic> characteristics);

// Heatmaps ---------------------------------------------------------------------

struct HeatmapExport {
  std::string qbas_csv;          // session_id, qbas_1..qbas_14
  std::string capabilities_csv;  // session_id, then capability keys
  std::vector<std::string> session_ids;
  std::size_t excluded = 0;  // known sessions without a rating
};

/// Rows ordered by session_id. Throws EmptyOutputError without ratings.
HeatmapExport export_heatmap(std::span<const assessment::RatingForm> ratings,
                             std::span<const std::string> all_session_ids = {});

/// Writes qbas_heatmap.csv and capabilities_heatmap.csv; returns their paths.
std::vector<std::filesystem::path> write_heatmap(const HeatmapExport& heatmap,
                                                 const std::filesystem::path& directory);

// Report -----------------------------------------------------------------------

/// descriptives, adequacy, variance, comparisons.
const std::vector<std::string>& table_families();

struct ReportOptions {
  std::set<std::string> tables;  // empty selects every family
  reml::RemlOptions reml;
};

/// Every selected table family as one JSON document. Throws EmptyOutputError
/// ("no ratings ingested") without ratings and ArgumentError for an unknown
/// family name.
nlohmann::json build_report(std::span<const RatedSession> sessions,
                            std::span<const Characteristic> characteristics,
                            const ReportOptions& options = {});

/// Plain-text rendering of build_report output.
std::string render_report_text(const nlohmann::json& report);

}  // namespace simeval::analysis
