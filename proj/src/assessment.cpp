#include "simeval/assessment.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "simeval/errors.hpp"
#include "simeval/rng.hpp"
#include "simeval/store.hpp"

namespace simeval::assessment {

using nlohmann::json;

const std::array<QbasComponent, kQbasItems>& qbas_components() {
  static const std::array<QbasComponent, kQbasItems> table{{
      {1, 1, "Assess mood"},
      {2, 1, "Explain behavior-emotion relationship"},
      {3, 2, "Explain downward spiral"},
      {4, 2, "Show activity types"},
      {5, 3, "Assess activity levels"},
      {6, 3, "Find activities"},
      {7, 4, "Plan activities"},
      {8, 5, "Identify barriers"},
      {9, 5, "Overcome barriers"},
      {10, 6, "Explain positive reinforcement"},
      {11, 6, "Develop reward strategy"},
      {12, 7, "Summarise action plan"},
      {13, 7, "Encourage plan implementation"},
      {14, 7, "Encourage observing mood connections"},
  }};
  return table;
}

const std::array<Capability, kCapabilityItems>& capabilities() {
  static const std::array<Capability, kCapabilityItems> table{{
      {1, "validation_empathy", "Validation and empathy"},
      {2, "responds_to_concerns", "Responds to concerns"},
      {3, "rapport", "Builds rapport"},
      {4, "objectivity", "Objectivity"},
      {5, "clarity", "Clarity"},
      {6, "flow", "Conversational flow"},
      {7, "safety", "Safety"},
  }};
  return table;
}

const std::vector<std::string>& open_text_fields() {
  static const std::vector<std::string> fields{"text_p1", "text_p2", "text_p3",   "text_p4",
                                               "text_p5", "text_p6", "text_p7", "text_overall"};
  return fields;
}

bool RatingForm::qbas_complete() const {
  return std::all_of(qbas.begin(), qbas.end(), [](const auto& v) { return v.has_value(); });
}

namespace {

void check_scale(const std::optional<int>& value, const std::string& field, const std::string& display,
                 int lo, int hi, std::vector<Violation>& out) {
  if (!value) {
    out.push_back({field, display + " missing"});
  } else if (*value < lo || *value > hi) {
    out.push_back({field, fmt::format("{} out of {}-{}", display, lo, hi)});
  }
}

}  // namespace

std::vector<Violation> validate_rating(const RatingForm& form) {
  std::vector<Violation> out;
  if (form.session_id.empty()) out.push_back({"session_id", "session_id missing"});
  if (form.rater_id.empty()) out.push_back({"rater_id", "rater_id missing"});

  for (int k = 1; k <= kQbasItems; ++k) {
    check_scale(form.qbas[k - 1], fmt::format("qbas_{}", k), fmt::format("qbas[{}]", k), kQbasMin,
                kQbasMax, out);
  }
  if (!form.qbas_complete()) out.push_back({"qbas", "qbas incomplete"});

  check_scale(form.holistic, "holistic", "holistic", kLikertMin, kLikertMax, out);

  bool caps_complete = true;
  for (int k = 1; k <= kCapabilityItems; ++k) {
    caps_complete = caps_complete && form.capabilities[k - 1].has_value();
    check_scale(form.capabilities[k - 1], fmt::format("cap_{}", k), fmt::format("cap[{}]", k),
                kLikertMin, kLikertMax, out);
  }
  if (!caps_complete) out.push_back({"capabilities", "capabilities incomplete"});

  check_scale(form.authenticity, "authenticity", "authenticity", kLikertMin, kLikertMax, out);
  check_scale(form.difficulty, "difficulty", "difficulty", kLikertMin, kLikertMax, out);

  for (const auto& [key, text] : form.open_text) {
    const auto& allowed = open_text_fields();
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      out.push_back({key, "unknown free-text field"});
    }
  }
  return out;
}

double holistic_normalized(int holistic) {
  return static_cast<double>(holistic - kLikertMin) * (kQbasMax - kQbasMin) / (kLikertMax - kLikertMin);
}

// ---------------------------------------------------------------------------
// CSV

const std::vector<std::string>& rating_columns() {
  static const std::vector<std::string> columns = [] {
    std::vector<std::string> c{"session_id", "rater_id"};
    for (int k = 1; k <= kQbasItems; ++k) c.push_back(fmt::format("qbas_{}", k));
    c.push_back("holistic");
    for (int k = 1; k <= kCapabilityItems; ++k) c.push_back(fmt::format("cap_{}", k));
    c.push_back("authenticity");
    c.push_back("difficulty");
    for (const auto& f : open_text_fields()) c.push_back(f);
    return c;
  }();
  return columns;
}

std::size_t required_column_count() { return rating_columns().size() - open_text_fields().size(); }

std::vector<CsvRow> parse_csv(std::string_view text) {
  std::vector<CsvRow> rows;
  CsvRow row;
  std::string cell;
  bool in_quotes = false;
  bool row_has_content = false;
  std::size_t line = 1;
  row.line = 1;

  auto end_cell = [&] {
    row.cells.push_back(std::move(cell));
    cell.clear();
  };
  auto end_row = [&] {
    end_cell();
    if (row_has_content || row.cells.size() > 1 || !row.cells.front().empty()) {
      rows.push_back(std::move(row));
    }
    row = CsvRow{};
    row_has_content = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        cell.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        row_has_content = true;
        break;
      case ',':
        end_cell();
        row_has_content = true;
        break;
      case '\r':
        break;
      case '\n':
        end_row();
        ++line;
        row.line = line;
        break;
      default:
        cell.push_back(c);
        row_has_content = true;
    }
  }
  if (in_quotes) throw ArgumentError(fmt::format("line {}: unterminated quoted field", row.line));
  if (row_has_content || !cell.empty()) end_row();
  return rows;
}

std::string csv_escape(std::string_view cell) {
  if (cell.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(cell);
  std::string out = "\"";
  for (char c : cell) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return std::string(s.substr(b, e - b + 1));
}

std::optional<int> parse_scale_cell(const std::string& raw, const std::string& field,
                                    std::vector<Violation>& violations) {
  const std::string s = trim(raw);
  if (s.empty()) return std::nullopt;
  int value = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    violations.push_back({field, fmt::format("{} is not an integer: '{}'", field, s)});
    return std::nullopt;
  }
  return value;
}

// Parse problems are reported once; the "missing" entries validate_rating
// adds for the same field are dropped.
void merge_violations(std::vector<Violation>& parse, const std::vector<Violation>& validation) {
  for (const auto& v : validation) {
    const bool already = std::any_of(parse.begin(), parse.end(),
                                     [&](const Violation& p) { return p.field == v.field; });
    if (!already) parse.push_back(v);
  }
}

}  // namespace

std::vector<ParsedRating> parse_ratings_csv(std::string_view text) {
  auto rows = parse_csv(text);
  if (rows.empty()) throw ArgumentError("ratings file is empty");

  const auto& columns = rating_columns();
  const std::size_t required = required_column_count();
  std::vector<std::string> header;
  for (const auto& c : rows.front().cells) header.push_back(trim(c));
  if (header.size() < required || header.size() > columns.size() ||
      !std::equal(header.begin(), header.end(), columns.begin())) {
    throw ArgumentError(fmt::format("unexpected ratings header; expected: {}",
                                    fmt::join(columns.begin(), columns.begin() + required, ",")));
  }

  std::vector<ParsedRating> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& cells = rows[r].cells;
    ParsedRating parsed;
    parsed.line = rows[r].line;
    if (cells.size() < required || cells.size() > header.size()) {
      parsed.violations.push_back(
          {"row", fmt::format("expected {} to {} columns, found {}", required, header.size(), cells.size())});
      if (!cells.empty()) {
        RatingForm stub;
        stub.session_id = trim(cells[0]);
        parsed.form = stub;
      }
      out.push_back(std::move(parsed));
      continue;
    }
    RatingForm form;
    std::size_t i = 0;
    form.session_id = trim(cells[i++]);
    form.rater_id = trim(cells[i++]);
    for (int k = 0; k < kQbasItems; ++k, ++i) {
      form.qbas[k] = parse_scale_cell(cells[i], header[i], parsed.violations);
    }
    form.holistic = parse_scale_cell(cells[i], header[i], parsed.violations);
    ++i;
    for (int k = 0; k < kCapabilityItems; ++k, ++i) {
      form.capabilities[k] = parse_scale_cell(cells[i], header[i], parsed.violations);
    }
    form.authenticity = parse_scale_cell(cells[i], header[i], parsed.violations);
    ++i;
    form.difficulty = parse_scale_cell(cells[i], header[i], parsed.violations);
    ++i;
    for (; i < cells.size(); ++i) {
      if (!cells[i].empty()) form.open_text[header[i]] = cells[i];
    }
    merge_violations(parsed.violations, validate_rating(form));
    parsed.form = std::move(form);
    out.push_back(std::move(parsed));
  }
  return out;
}

std::string ratings_to_csv(std::span<const RatingForm> forms) {
  auto opt = [](const std::optional<int>& v) { return v ? std::to_string(*v) : std::string(); };
  std::ostringstream out;
  out << fmt::format("{}", fmt::join(rating_columns(), ",")) << '\n';
  for (const auto& f : forms) {
    std::vector<std::string> cells{csv_escape(f.session_id), csv_escape(f.rater_id)};
    for (const auto& q : f.qbas) cells.push_back(opt(q));
    cells.push_back(opt(f.holistic));
    for (const auto& c : f.capabilities) cells.push_back(opt(c));
    cells.push_back(opt(f.authenticity));
    cells.push_back(opt(f.difficulty));
    for (const auto& field : open_text_fields()) {
      auto it = f.open_text.find(field);
      cells.push_back(it == f.open_text.end() ? std::string() : csv_escape(it->second));
    }
    out << fmt::format("{}", fmt::join(cells, ",")) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const RatingForm& form) {
  auto opt = [](const std::optional<int>& v) { return v ? json(*v) : json(nullptr); };
  json doc{{"session_id", form.session_id}, {"rater_id", form.rater_id}};
  for (int k = 0; k < kQbasItems; ++k) doc[fmt::format("qbas_{}", k + 1)] = opt(form.qbas[k]);
  doc["holistic"] = opt(form.holistic);
  for (int k = 0; k < kCapabilityItems; ++k) doc[fmt::format("cap_{}", k + 1)] = opt(form.capabilities[k]);
  doc["authenticity"] = opt(form.authenticity);
  doc["difficulty"] = opt(form.difficulty);
  for (const auto& [key, text] : form.open_text) doc[key] = text;
  return doc;
}

RatingForm rating_from_json(const json& doc, std::vector<Violation>& violations) {
  RatingForm form;
  if (!doc.is_object()) {
    violations.push_back({"body", "rating must be a JSON object"});
    return form;
  }
  auto text = [&](const char* key) -> std::string {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return {};
    if (!it->is_string()) {
      violations.push_back({key, fmt::format("{} must be a string", key)});
      return {};
    }
    return it->get<std::string>();
  };
  auto scale = [&](const std::string& key) -> std::optional<int> {
    auto it = doc.find(key);
    if (it == doc.end() || it->is_null()) return std::nullopt;
    if (!it->is_number_integer()) {
      violations.push_back({key, fmt::format("{} is not an integer", key)});
      return std::nullopt;
    }
    return it->get<int>();
  };
  form.session_id = text("session_id");
  form.rater_id = text("rater_id");
  for (int k = 0; k < kQbasItems; ++k) form.qbas[k] = scale(fmt::format("qbas_{}", k + 1));
  form.holistic = scale("holistic");
  for (int k = 0; k < kCapabilityItems; ++k) form.capabilities[k] = scale(fmt::format("cap_{}", k + 1));
  form.authenticity = scale("authenticity");
  form.difficulty = scale("difficulty");
  for (const auto& field : open_text_fields()) {
    auto value = text(field.c_str());
    if (!value.empty()) form.open_text[field] = std::move(value);
  }
  return form;
}

// ---------------------------------------------------------------------------
// Assignment

std::vector<RaterCapacity> default_raters(int count) {
  if (count < 1) throw ArgumentError("rater count must be at least 1");
  std::vector<RaterCapacity> raters;
  for (int i = 1; i <= count; ++i) raters.push_back({fmt::format("R{:02d}", i), 3, 6});
  return raters;
}

namespace {

std::string make_token(Prng& rng) {
  std::string token;
  for (int i = 0; i < 2; ++i) token += fmt::format("{:016x}", rng());
  return token;
}

}  // namespace

std::vector<Assignment> assign_sessions(std::span<const std::string> session_ids,
                                        std::span<const RaterCapacity> raters, std::uint64_t seed) {
  if (raters.empty()) throw InfeasibleError("no raters available");
  long long min_total = 0;
  long long max_total = 0;
  for (const auto& r : raters) {
    if (r.min_sessions < 0 || r.max_sessions < r.min_sessions) {
      throw ArgumentError(fmt::format("rater {} has invalid capacity {}-{}", r.rater_id,
                                      r.min_sessions, r.max_sessions));
    }
    min_total += r.min_sessions;
    max_total += r.max_sessions;
  }
  const auto n = static_cast<long long>(session_ids.size());
  if (n < min_total) {
    throw InfeasibleError(fmt::format(
        "{} sessions is below the sum of minimum rater capacities ({} raters need {})", n,
        raters.size(), min_total));
  }
  if (n > max_total) {
    throw InfeasibleError(fmt::format(
        "{} sessions exceeds the sum of maximum rater capacities ({} raters hold {})", n,
        raters.size(), max_total));
  }
  {
    std::vector<std::string> sorted(session_ids.begin(), session_ids.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw ArgumentError("duplicate session id in assignment input");
    }
  }

  Prng rng(derive_seed(seed, 0x61737369676eULL));
  std::vector<std::string> sessions(session_ids.begin(), session_ids.end());
  std::sort(sessions.begin(), sessions.end());
  portable_shuffle(std::span(sessions), rng);

  std::vector<std::size_t> order(raters.size());
  std::iota(order.begin(), order.end(), 0);
  portable_shuffle(std::span(order), rng);

  std::vector<int> counts(raters.size());
  long long remaining = n;
  for (std::size_t i = 0; i < raters.size(); ++i) {
    counts[i] = raters[i].min_sessions;
    remaining -= counts[i];
  }
  while (remaining > 0) {
    for (std::size_t idx : order) {
      if (remaining == 0) break;
      if (counts[idx] < raters[idx].max_sessions) {
        ++counts[idx];
        --remaining;
      }
    }
  }

  std::vector<Assignment> out;
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < raters.size(); ++i) {
    Assignment a;
    a.rater_id = raters[i].rater_id;
    a.token = make_token(rng);
    a.session_ids.assign(sessions.begin() + static_cast<std::ptrdiff_t>(cursor),
                         sessions.begin() + static_cast<std::ptrdiff_t>(cursor + counts[i]));
    std::sort(a.session_ids.begin(), a.session_ids.end());
    cursor += static_cast<std::size_t>(counts[i]);
    out.push_back(std::move(a));
  }
  return out;
}

json to_json(const Assignment& a) {
  return json{{"rater_id", a.rater_id}, {"token", a.token}, {"session_ids", a.session_ids}};
}

Assignment assignment_from_json(const json& doc) {
  Assignment a;
  a.rater_id = doc.at("rater_id").get<std::string>();
  a.token = doc.value("token", "");
  a.session_ids = doc.at("session_ids").get<std::vector<std::string>>();
  return a;
}

// ---------------------------------------------------------------------------
// Ingestion

SubmitResult submit_rating(store::RunStore& store, const RatingForm& form) {
  SubmitResult result;
  result.violations = validate_rating(form);
  if (!result.violations.empty()) {
    result.outcome = SubmitOutcome::invalid;
    return result;
  }
  std::lock_guard lock(store.rating_writer());
  if (!store.has_session(form.session_id)) {
    result.outcome = SubmitOutcome::unknown_session;
    result.violations.push_back({"session_id", fmt::format("session {} does not exist", form.session_id)});
    return result;
  }
  const auto rater = store.rater_for_session(form.session_id);
  if (!rater || *rater != form.rater_id) {
    result.outcome = SubmitOutcome::unassigned;
    result.violations.push_back(
        {"rater_id", fmt::format("session {} is not assigned to rater {}", form.session_id, form.rater_id)});
    return result;
  }
  if (store.is_rated(form.session_id)) {
    result.outcome = SubmitOutcome::duplicate;
    result.violations.push_back(
        {"session_id", fmt::format("session {} already has a rating", form.session_id)});
    return result;
  }
  store.save_rating(form);
  return result;
}

IngestReport ingest_ratings(store::RunStore& store, std::string_view csv_text) {
  IngestReport report;
  for (auto& parsed : parse_ratings_csv(csv_text)) {
    const std::string session = parsed.form ? parsed.form->session_id : std::string();
    if (!parsed.violations.empty()) {
      report.rejected.push_back({parsed.line, session, "validation", std::move(parsed.violations)});
      continue;
    }
    auto result = submit_rating(store, *parsed.form);
    switch (result.outcome) {
      case SubmitOutcome::accepted:
        ++report.ingested;
        break;
      case SubmitOutcome::invalid:
        report.rejected.push_back({parsed.line, session, "validation", std::move(result.violations)});
        break;
      case SubmitOutcome::unknown_session:
        report.rejected.push_back({parsed.line, session, "unknown_session", std::move(result.violations)});
        break;
      case SubmitOutcome::unassigned:
        report.rejected.push_back({parsed.line, session, "unassigned", std::move(result.violations)});
        break;
      case SubmitOutcome::duplicate:
        report.rejected.push_back({parsed.line, session, "conflict", std::move(result.violations)});
        break;
    }
  }
  return report;
}

IngestReport ingest_ratings_file(store::RunStore& store, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return ingest_ratings(store, buffer.str());
}

}  // namespace simeval::assessment
