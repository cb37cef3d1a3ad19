#pragma once

#include "circuit_lens/error.hpp"
#include "circuit_lens/forward.hpp"
#include "circuit_lens/linalg.hpp"

#include <algorithm>
#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace circuit_lens {

enum class Number { sing, plur };

inline Number opposite(Number n) { return n == Number::sing ? Number::plur : Number::sing; }
inline std::string to_string(Number n) { return n == Number::sing ? "sing" : "plur"; }
inline Number number_from_string(const std::string& s) {
  if (s == "sing") return Number::sing;
  if (s == "plur") return Number::plur;
  throw Error(ErrorCode::invalid_argument, "subject number must be 'sing' or 'plur', got '" + s + "'");
}

struct NumberPair {
  std::string sing;
  std::string plur;

  const std::string& get(Number n) const { return n == Number::sing ? sing : plur; }
  bool operator==(const NumberPair&) const = default;
};

/// A toy language over a closed word-level vocabulary. Sentences follow the
/// fixed six-slot template  D N_subj R V_embed D_obj N_obj.
struct LanguageSpec {
  std::string name;
  std::map<std::string, TokenId> vocab;
  NumberPair determiners;
  std::vector<NumberPair> subject_nouns;
  std::string object_determiner;
  std::vector<std::string> object_nouns;
  std::string relativizer;
  std::vector<NumberPair> embedded_verbs;
  NumberPair answer_verbs;
  bool marks_embedded_verb = false;
  bool marks_determiner = false;

  TokenId id(const std::string& word) const {
    const auto it = vocab.find(word);
    require(it != vocab.end(), ErrorCode::invalid_argument,
            "word '" + word + "' missing from the " + name + " vocabulary");
    return it->second;
  }

  TokenId answer(Number n) const { return id(answer_verbs.get(n)); }

  bool operator==(const LanguageSpec&) const = default;
};

inline constexpr std::size_t kTemplateLength = 6;
inline constexpr std::size_t kDeterminerSlot = 0;
inline constexpr std::size_t kSubjectSlot = 1;
inline constexpr std::size_t kRelativizerSlot = 2;
inline constexpr std::size_t kEmbeddedVerbSlot = 3;
inline constexpr std::size_t kObjectDeterminerSlot = 4;
inline constexpr std::size_t kObjectSlot = 5;

/// Slots whose token changes when the subject number flips.
inline std::vector<std::size_t> number_marked_slots(const LanguageSpec& spec) {
  std::vector<std::size_t> slots;
  if (spec.marks_determiner) slots.push_back(kDeterminerSlot);
  slots.push_back(kSubjectSlot);
  if (spec.marks_embedded_verb) slots.push_back(kEmbeddedVerbSlot);
  return slots;
}

inline void validate(const LanguageSpec& spec) {
  std::set<TokenId> ids;
  for (const auto& [word, id] : spec.vocab) {
    require(id >= 0, ErrorCode::invalid_argument, "negative token id for '" + word + "'");
    require(ids.insert(id).second, ErrorCode::invalid_argument,
            "token id " + std::to_string(id) + " assigned to more than one word");
  }
  const auto check_pair = [&](const NumberPair& p, bool marked, const std::string& what) {
    spec.id(p.sing);
    spec.id(p.plur);
    if (marked)
      require(p.sing != p.plur, ErrorCode::invalid_argument,
              what + " is number-marked but '" + p.sing + "' has identical forms");
    else
      require(p.sing == p.plur, ErrorCode::invalid_argument,
              what + " is not number-marked but has distinct forms");
  };
  check_pair(spec.determiners, spec.marks_determiner, "determiner");
  require(!spec.subject_nouns.empty() && !spec.object_nouns.empty() &&
              !spec.embedded_verbs.empty(),
          ErrorCode::lexicon_too_small, spec.name + ": empty noun or verb list");
  for (const auto& n : spec.subject_nouns) check_pair(n, true, "subject noun");
  for (const auto& v : spec.embedded_verbs) check_pair(v, spec.marks_embedded_verb, "embedded verb");
  check_pair(spec.answer_verbs, true, "answer verb");
  spec.id(spec.object_determiner);
  spec.id(spec.relativizer);
  for (const auto& o : spec.object_nouns) spec.id(o);
}

struct ContrastivePair {
  TokenSequence clean;
  TokenSequence corrupted;
  TokenId g = 0;  // verb agreeing with the clean subject
  TokenId b = 0;  // verb agreeing with the corrupted subject
  Number subject_number_clean = Number::sing;
  std::size_t subject_position = kSubjectSlot;
  std::vector<std::string> token_labels;

  bool operator==(const ContrastivePair&) const = default;
};

enum class Split { train, validation, test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "unknown";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw Error(ErrorCode::invalid_argument, "unknown split '" + s + "'");
}

struct Dataset {
  LanguageSpec language;
  std::vector<ContrastivePair> pairs;
  Split split = Split::train;
  std::uint64_t seed = 0;
};

/// One lexical choice for the template: subject, embedded verb, object.
struct TemplateChoice {
  std::size_t subject = 0;
  std::size_t verb = 0;
  std::size_t object = 0;

  bool operator==(const TemplateChoice&) const = default;
  auto operator<=>(const TemplateChoice&) const = default;
};

inline std::vector<std::string> instantiate_words(const LanguageSpec& spec,
                                                  const TemplateChoice& c, Number n) {
  return {spec.determiners.get(n),
          spec.subject_nouns.at(c.subject).get(n),
          spec.relativizer,
          spec.embedded_verbs.at(c.verb).get(n),
          spec.object_determiner,
          spec.object_nouns.at(c.object)};
}

inline TokenSequence to_tokens(const LanguageSpec& spec, const std::vector<std::string>& words) {
  TokenSequence out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(spec.id(w));
  return out;
}

namespace detail {

struct ParsedSentence {
  TemplateChoice choice;
  Number number = Number::sing;
};

template <typename Forms>
std::optional<std::pair<std::size_t, Number>> find_form(const LanguageSpec& spec,
                                                        const Forms& forms, TokenId token) {
  for (std::size_t i = 0; i < forms.size(); ++i) {
    if (spec.id(forms[i].sing) == token) return std::pair{i, Number::sing};
    if (spec.id(forms[i].plur) == token) return std::pair{i, Number::plur};
  }
  return std::nullopt;
}

inline ParsedSentence parse(const LanguageSpec& spec, std::span<const TokenId> tokens) {
  require(tokens.size() == kTemplateLength, ErrorCode::template_mismatch,
          "expected " + std::to_string(kTemplateLength) + " tokens, got " +
              std::to_string(tokens.size()));
  ParsedSentence out;
  const auto subject = find_form(spec, spec.subject_nouns, tokens[kSubjectSlot]);
  require(subject.has_value(), ErrorCode::template_mismatch, "slot 1 is not a subject noun");
  out.choice.subject = subject->first;
  out.number = subject->second;

  const TokenId det = tokens[kDeterminerSlot];
  require(det == spec.id(spec.determiners.get(out.number)), ErrorCode::template_mismatch,
          "slot 0 is not the determiner agreeing with the subject");
  require(tokens[kRelativizerSlot] == spec.id(spec.relativizer), ErrorCode::template_mismatch,
          "slot 2 is not the relativizer");

  const auto verb = find_form(spec, spec.embedded_verbs, tokens[kEmbeddedVerbSlot]);
  require(verb.has_value(), ErrorCode::template_mismatch, "slot 3 is not an embedded verb");
  if (spec.marks_embedded_verb)
    require(verb->second == out.number, ErrorCode::template_mismatch,
            "embedded verb does not agree with the subject");
  out.choice.verb = verb->first;

  require(tokens[kObjectDeterminerSlot] == spec.id(spec.object_determiner),
          ErrorCode::template_mismatch, "slot 4 is not the object determiner");
  const auto obj = std::find_if(spec.object_nouns.begin(), spec.object_nouns.end(),
                                [&](const std::string& w) { return spec.id(w) == tokens[kObjectSlot]; });
  require(obj != spec.object_nouns.end(), ErrorCode::template_mismatch,
          "slot 5 is not an object noun");
  out.choice.object = static_cast<std::size_t>(obj - spec.object_nouns.begin());
  return out;
}

}  // namespace detail

/// Flips the subject number, along with every slot the language marks for it.
inline TokenSequence corrupt(std::span<const TokenId> clean, const LanguageSpec& spec) {
  const auto parsed = detail::parse(spec, clean);
  return to_tokens(spec, instantiate_words(spec, parsed.choice, opposite(parsed.number)));
}

inline ContrastivePair make_pair(const LanguageSpec& spec, const TemplateChoice& choice,
                                 Number clean_number) {
  ContrastivePair pair;
  pair.token_labels = instantiate_words(spec, choice, clean_number);
  pair.clean = to_tokens(spec, pair.token_labels);
  pair.corrupted = corrupt(pair.clean, spec);
  pair.g = spec.answer(clean_number);
  pair.b = spec.answer(opposite(clean_number));
  pair.subject_number_clean = clean_number;
  pair.subject_position = kSubjectSlot;
  return pair;
}

namespace detail {

inline constexpr std::uint64_t kPartitionSeed = 0x5eedc0ffee15ULL;

template <typename T>
void seeded_shuffle(std::vector<T>& items, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::shuffle(items.begin(), items.end(), rng);
}

}  // namespace detail

/// Template choices belonging to `split`. The partition uses a fixed seed so
/// that splits stay disjoint no matter which sampling seed a caller picks:
/// 60% train, 20% validation, 20% test.
inline std::vector<TemplateChoice> split_choices(const LanguageSpec& spec, Split split) {
  std::vector<TemplateChoice> all;
  for (std::size_t s = 0; s < spec.subject_nouns.size(); ++s)
    for (std::size_t v = 0; v < spec.embedded_verbs.size(); ++v)
      for (std::size_t o = 0; o < spec.object_nouns.size(); ++o) all.push_back({s, v, o});
  detail::seeded_shuffle(all, detail::kPartitionSeed);
  const std::size_t n_train = all.size() * 6 / 10;
  const std::size_t n_val = all.size() * 2 / 10;
  const auto begin = all.begin();
  switch (split) {
    case Split::train: return {begin, begin + static_cast<std::ptrdiff_t>(n_train)};
    case Split::validation:
      return {begin + static_cast<std::ptrdiff_t>(n_train),
              begin + static_cast<std::ptrdiff_t>(n_train + n_val)};
    case Split::test: return {begin + static_cast<std::ptrdiff_t>(n_train + n_val), all.end()};
  }
  return {};
}

/// n pairs with alternating clean subject number (even index singular).
inline Dataset generate_dataset(const LanguageSpec& spec, std::size_t n, std::uint64_t seed,
                                Split split) {
  validate(spec);
  require(n >= 1, ErrorCode::invalid_argument, "dataset size must be >= 1");
  std::vector<TemplateChoice> pool = split_choices(spec, split);
  require(n <= pool.size(), ErrorCode::lexicon_too_small,
          spec.name + " " + to_string(split) + " split has " + std::to_string(pool.size()) +
              " distinct template choices, " + std::to_string(n) + " requested");
  detail::seeded_shuffle(pool, seed);

  Dataset ds;
  ds.language = spec;
  ds.split = split;
  ds.seed = seed;
  ds.pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    ds.pairs.push_back(make_pair(spec, pool[i], i % 2 == 0 ? Number::sing : Number::plur));
  return ds;
}

struct AlignmentIssue {
  std::string code;
  std::optional<std::size_t> position;
  std::string message;
};

struct AlignmentReport {
  bool ok = true;
  std::vector<AlignmentIssue> issues;
};

/// Structural checks on a pair. With a language, also checks that the two
/// sides differ exactly at that language's number-marked slots.
inline AlignmentReport validate_alignment(const ContrastivePair& pair,
                                          const LanguageSpec* language = nullptr) {
  AlignmentReport report;
  const auto fail = [&](std::string code, std::optional<std::size_t> pos, std::string msg) {
    report.ok = false;
    report.issues.push_back({std::move(code), pos, std::move(msg)});
  };

  if (pair.clean.size() != pair.corrupted.size()) {
    fail("length_mismatch", std::min(pair.clean.size(), pair.corrupted.size()),
         "clean has " + std::to_string(pair.clean.size()) + " tokens, corrupted has " +
             std::to_string(pair.corrupted.size()));
  }
  if (pair.clean.empty()) fail("empty", std::nullopt, "clean sequence is empty");
  if (pair.g == pair.b) fail("answer_collision", std::nullopt, "g and b are the same token");
  if (pair.token_labels.size() != pair.clean.size()) {
    fail("label_mismatch", std::nullopt,
         std::to_string(pair.token_labels.size()) + " labels for " +
             std::to_string(pair.clean.size()) + " tokens");
  }
  const std::size_t common = std::min(pair.clean.size(), pair.corrupted.size());
  if (pair.subject_position >= common) {
    fail("subject_position", pair.subject_position, "subject position outside sequence");
  } else if (pair.clean[pair.subject_position] == pair.corrupted[pair.subject_position]) {
    fail("subject_not_flipped", pair.subject_position, "subject token identical on both sides");
  }

  if (language != nullptr && pair.clean.size() == pair.corrupted.size()) {
    const auto marked = number_marked_slots(*language);
    for (std::size_t p = 0; p < common; ++p) {
      const bool differs = pair.clean[p] != pair.corrupted[p];
      const bool expected = std::find(marked.begin(), marked.end(), p) != marked.end();
      if (differs && !expected)
        fail("unexpected_difference", p, "sides differ at an unmarked slot");
      else if (!differs && expected)
        fail("missing_difference", p, "number-marked slot identical on both sides");
    }
    if (pair.clean.size() == kTemplateLength) {
      try {
        const auto parsed = detail::parse(*language, pair.clean);
        if (parsed.number != pair.subject_number_clean)
          fail("number_label", kSubjectSlot, "subject_number disagrees with the clean subject");
        if (pair.g != language->answer(parsed.number))
          fail("answer_label", std::nullopt, "g does not agree with the clean subject");
      } catch (const Error& e) {
        fail("template_mismatch", std::nullopt, e.what());
      }
    }
  }
  return report;
}

}  // namespace circuit_lens
