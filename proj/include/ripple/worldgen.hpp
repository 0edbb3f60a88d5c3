#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace ripple::worldgen {

using TokenSeq = std::vector<std::int64_t>;

// Synthetic knowledge world. Country attributes (official language, currency,
// capital) are fixed one-to-one by index; person facts are sampled. The rule
// closure is fully determined by the base relations:
//   speaks(p)        := official_language(citizen_of(p))
//   uses_currency(p) := currency(citizen_of(p))
struct World {
    std::uint64_t seed = 0;
    int num_persons = 0;
    int num_countries = 0;
    std::vector<int> citizen_of;  // person -> country

    int official_language(int country) const { return country; }
    int currency(int country) const { return country; }
    int capital(int country) const { return country; }
    int alias_of(int person) const { return person; }

    int speaks(int person) const { return official_language(citizen_of.at(static_cast<size_t>(person))); }
    int uses_currency(int person) const { return currency(citizen_of.at(static_cast<size_t>(person))); }
    int capital_of_citizenship(int person) const { return capital(citizen_of.at(static_cast<size_t>(person))); }
};

World generate_world(int num_persons, int num_countries, std::uint64_t seed);

std::string world_to_json(const World& w, int num_languages, int num_templates);
World world_from_json(const std::string& text, int* num_languages = nullptr, int* num_templates = nullptr);

// ---------------------------------------------------------------------------

struct Vocab {
    std::vector<std::string> tokens;
    std::map<std::string, std::int64_t> index;
    std::int64_t eos_id = -1;

    std::int64_t id(const std::string& tok) const;
    std::string text(const TokenSeq& seq) const;   // space-joined
    TokenSeq parse(const std::string& s) const;    // whitespace-split; unknown token throws
};

enum class Relation { CitizenOf, Speaks, UsesCurrency, CapitalOfCitizenship, AliasOf };

struct FactRecord {
    TokenSeq query;
    TokenSeq answer;
    std::string fact_id;
    int lang = 0;
    int tmpl = 0;
    Relation relation = Relation::CitizenOf;
    int person = 0;
    bool negated = false;
    bool alias_subject = false;
    std::int64_t subject_pos = 0;  // last token of the subject span
};

struct FactCorpus {
    Vocab vocab;
    std::vector<FactRecord> records;
    int num_languages = 1;
    int num_templates = 2;
};

// Renders every base and derived fact per language and paraphrase template,
// both with the canonical subject surface and its alias, plus negated
// citizenship templates. max_vocab_size > 0 caps the vocabulary.
FactCorpus render_corpus(const World& w, int num_languages, std::int64_t max_vocab_size = 0);

// ---------------------------------------------------------------------------

enum class Category { LG, CI, CII, SA, PV, RS, NEG, XLING };
enum class Expectation { ShouldChange, ShouldPreserve, ShouldAvoid };

std::string to_string(Category c);
Category category_from_string(const std::string& s);
Expectation expectation_for(Category c);

struct RipplePair {
    std::string pair_id;
    TokenSeq query;
    TokenSeq gold_post;  // a'_y; for NEG this is the forbidden completion
    TokenSeq gold_pre;   // a_y
    Category category = Category::LG;
    Expectation expectation = Expectation::ShouldChange;
    std::int64_t subject_pos = 0;

    bool operator==(const RipplePair& o) const {
        return query == o.query && gold_post == o.gold_post && gold_pre == o.gold_pre &&
               category == o.category && expectation == o.expectation && subject_pos == o.subject_pos;
    }
};

struct EditCase {
    std::string edit_id;
    int person = -1;        // synthetic-world provenance; not serialized
    int old_country = -1;
    int new_country = -1;
    TokenSeq query;         // q_x
    TokenSeq old_answer;    // a_x
    TokenSeq new_answer;    // a'_x
    std::int64_t subject_pos = 0;
    std::vector<RipplePair> ripples;

    // Round-trip equality covers the serialized content only.
    bool operator==(const EditCase& o) const {
        return query == o.query && old_answer == o.old_answer && new_answer == o.new_answer &&
               subject_pos == o.subject_pos && ripples == o.ripples;
    }
};

// Ripple derivation for the edit citizen_of(person) -> new_country. Emits one
// pair per enabled category, except CI which carries both one-hop rules
// (speaks and currency). RS needs a second person; XLING a second language.
EditCase derive_ripples(const World& w, const FactCorpus& corpus, int person, int new_country);

// RippleEdits-format JSONL: one case per line,
//   {"edit": {"query", "old_answer", "new_answer"}, "ripples": [{"query", "answer", "category"}]}
// Writer adds optional "subject_pos" and per-ripple "pre_edit_answer" fields
// so that emitted cases reload losslessly; the loader accepts files without
// them.
void save_cases_jsonl(const std::string& path, const std::vector<EditCase>& cases, const Vocab& vocab);
std::vector<EditCase> load_rippleedits_jsonl(const std::string& path, const Vocab& vocab);

void save_corpus_jsonl(const std::string& path, const FactCorpus& corpus);

}  // namespace ripple::worldgen
