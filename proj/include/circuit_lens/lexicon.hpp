#pragma once

#include "circuit_lens/grammar.hpp"

#include <string>
#include <vector>

namespace circuit_lens {

/// Built-in English-like and Spanish-like toy languages over one shared
/// word-level vocabulary, plus a few non-template tokens (other verb forms,
/// foreign plural verbs, function words) that give promoted-token readouts
/// something to rank against.
struct ToyLexicon {
  std::vector<std::string> words;  // token id -> word
  LanguageSpec english;
  LanguageSpec spanish;
  std::vector<std::string> plural_verb_extras;
  std::vector<std::string> singular_verb_extras;
  std::vector<std::string> foreign_plural_verbs;

  std::size_t vocab_size() const { return words.size(); }
  const LanguageSpec& language(const std::string& name) const {
    if (name == english.name) return english;
    if (name == spanish.name) return spanish;
    throw Error(ErrorCode::invalid_argument, "unknown built-in language '" + name + "'");
  }
};

inline ToyLexicon toy_lexicon() {
  ToyLexicon lex;
  std::map<std::string, TokenId> vocab;
  const auto add = [&](const std::string& w) {
    if (vocab.count(w) == 0) {
      vocab.emplace(w, static_cast<TokenId>(lex.words.size()));
      lex.words.push_back(w);
    }
  };
  const auto add_pairs = [&](const std::vector<NumberPair>& pairs) {
    for (const auto& p : pairs) {
      add(p.sing);
      add(p.plur);
    }
  };
  const auto add_words = [&](const std::vector<std::string>& ws) {
    for (const auto& w : ws) add(w);
  };

  LanguageSpec& en = lex.english;
  en.name = "english";
  en.determiners = {"The", "The"};
  en.subject_nouns = {
      {"executive", "executives"}, {"author", "authors"},     {"pilot", "pilots"},
      {"senator", "senators"},     {"doctor", "doctors"},     {"farmer", "farmers"},
      {"surgeon", "surgeons"},     {"painter", "painters"},   {"lawyer", "lawyers"},
      {"teacher", "teachers"},     {"architect", "architects"}, {"officer", "officers"},
      {"customer", "customers"},   {"student", "students"},   {"banker", "bankers"},
      {"dancer", "dancers"}};
  en.relativizer = "that";
  en.embedded_verbs = {{"embarrassed", "embarrassed"}, {"admired", "admired"},
                       {"helped", "helped"},           {"hated", "hated"},
                       {"liked", "liked"},             {"thanked", "thanked"},
                       {"praised", "praised"},         {"called", "called"}};
  en.object_determiner = "the";
  en.object_nouns = {"manager", "guard",   "chef",   "minister", "clerk",    "judge",
                     "nurse",   "athlete", "actor",  "consultant", "pastor", "baker",
                     "tailor",  "mechanic", "driver", "singer"};
  en.answer_verbs = {"has", "have"};
  en.marks_determiner = false;
  en.marks_embedded_verb = false;

  LanguageSpec& es = lex.spanish;
  es.name = "spanish";
  es.determiners = {"El", "Los"};
  es.subject_nouns = {
      {"ingeniero", "ingenieros"}, {"abogado", "abogados"},     {"médico", "médicos"},
      {"maestro", "maestros"},     {"pintor", "pintores"},      {"granjero", "granjeros"},
      {"cirujano", "cirujanos"},   {"senador", "senadores"},    {"piloto", "pilotos"},
      {"ejecutivo", "ejecutivos"}, {"banquero", "banqueros"},   {"bailarín", "bailarines"},
      {"arquitecto", "arquitectos"}, {"oficial", "oficiales"},  {"estudiante", "estudiantes"},
      {"cliente", "clientes"}};
  es.relativizer = "que";
  es.embedded_verbs = {{"ayudó", "ayudaron"},   {"admiró", "admiraron"}, {"odió", "odiaron"},
                       {"saludó", "saludaron"}, {"llamó", "llamaron"},   {"visitó", "visitaron"},
                       {"conoció", "conocieron"}, {"buscó", "buscaron"}};
  es.object_determiner = "al";
  es.object_nouns = {"cantante", "guardia", "cocinero", "ministro", "empleado",  "juez",
                     "enfermero", "atleta", "vecino",   "consultor", "camarero", "panadero",
                     "sastre",   "mecánico", "conductor", "director"};
  es.answer_verbs = {"era", "eran"};
  es.marks_determiner = true;
  es.marks_embedded_verb = true;

  for (const LanguageSpec* spec : {&en, &es}) {
    add(spec->determiners.sing);
    add(spec->determiners.plur);
    add_pairs(spec->subject_nouns);
    add(spec->relativizer);
    add_pairs(spec->embedded_verbs);
    add(spec->object_determiner);
    add_words(spec->object_nouns);
    add(spec->answer_verbs.sing);
    add(spec->answer_verbs.plur);
  }
  lex.plural_verb_extras = {"are", "were", "son", "fueron"};
  lex.singular_verb_extras = {"is", "was", "es", "fue"};
  lex.foreign_plural_verbs = {"sono", "ont", "sind", "zijn"};
  add_words(lex.plural_verb_extras);
  add_words(lex.singular_verb_extras);
  add_words(lex.foreign_plural_verbs);
  add_words({".", ",", "and", "of", "y", "de", "se", "en"});

  en.vocab = vocab;
  es.vocab = vocab;
  return lex;
}

}  // namespace circuit_lens
