#include "ripple/worldgen.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "ripple/rng.hpp"

namespace ripple::worldgen {

using nlohmann::ordered_json;

namespace {

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

constexpr int kNumTemplates = 2;
constexpr int kMaxLanguages = 2;

// Language 1 tokens carry a "b" marker so the two surface vocabularies stay
// disjoint while naming the same semantics.
std::string lang_tag(int lang) { return lang == 0 ? "" : "b"; }

std::string person_tok(int p, int lang) { return "p" + lang_tag(lang) + std::to_string(p); }
std::string alias_tok(int p, int lang) { return "ali" + lang_tag(lang) + std::to_string(p); }
std::string country_tok(int c, int lang) { return "c" + lang_tag(lang) + std::to_string(c); }
std::string language_tok(int c, int lang) { return "lng" + lang_tag(lang) + std::to_string(c); }
std::string currency_tok(int c, int lang) { return "cur" + lang_tag(lang) + std::to_string(c); }
std::string capital_tok(int c, int lang) { return "cap" + lang_tag(lang) + std::to_string(c); }
std::string not_tok(int lang) { return "not" + lang_tag(lang); }

std::string relation_tok(Relation r, int tmpl, int lang) {
    const char* stem = nullptr;
    switch (r) {
        case Relation::CitizenOf: stem = "citizenq"; break;
        case Relation::Speaks: stem = "speaksq"; break;
        case Relation::UsesCurrency: stem = "currencyq"; break;
        case Relation::CapitalOfCitizenship: stem = "capccq"; break;
        case Relation::AliasOf: stem = "aliasq"; break;
    }
    return stem + lang_tag(lang) + std::to_string(tmpl);
}

const Relation kAllRelations[] = {Relation::CitizenOf, Relation::Speaks, Relation::UsesCurrency,
                                  Relation::CapitalOfCitizenship, Relation::AliasOf};

std::string relation_name(Relation r) {
    switch (r) {
        case Relation::CitizenOf: return "citizen";
        case Relation::Speaks: return "speaks";
        case Relation::UsesCurrency: return "currency";
        case Relation::CapitalOfCitizenship: return "capital";
        case Relation::AliasOf: return "alias";
    }
    return "?";
}

Vocab build_vocab(const World& w, int num_languages) {
    Vocab v;
    auto put = [&](const std::string& tok) {
        v.index.emplace(tok, static_cast<std::int64_t>(v.tokens.size()));
        v.tokens.push_back(tok);
    };
    for (int lang = 0; lang < num_languages; ++lang) {
        for (int p = 0; p < w.num_persons; ++p) put(person_tok(p, lang));
        for (int p = 0; p < w.num_persons; ++p) put(alias_tok(p, lang));
        for (int c = 0; c < w.num_countries; ++c) put(country_tok(c, lang));
        for (int c = 0; c < w.num_countries; ++c) put(language_tok(c, lang));
        for (int c = 0; c < w.num_countries; ++c) put(currency_tok(c, lang));
        for (int c = 0; c < w.num_countries; ++c) put(capital_tok(c, lang));
        for (Relation r : kAllRelations)
            for (int t = 0; t < kNumTemplates; ++t) put(relation_tok(r, t, lang));
        put(not_tok(lang));
    }
    put("<eos>");
    v.eos_id = static_cast<std::int64_t>(v.tokens.size()) - 1;
    return v;
}

std::string answer_token(const World& w, Relation r, int person, int lang) {
    switch (r) {
        case Relation::CitizenOf: return country_tok(w.citizen_of[static_cast<size_t>(person)], lang);
        case Relation::Speaks: return language_tok(w.speaks(person), lang);
        case Relation::UsesCurrency: return currency_tok(w.uses_currency(person), lang);
        case Relation::CapitalOfCitizenship: return capital_tok(w.capital_of_citizenship(person), lang);
        case Relation::AliasOf: return alias_tok(w.alias_of(person), lang);
    }
    return "?";
}

}  // namespace

World generate_world(int num_persons, int num_countries, std::uint64_t seed) {
    require(num_persons >= 1, "generate_world: need at least one person");
    require(num_countries >= 3,
            "generate_world: need at least 3 countries (a current one, an edit target and a distractor)");
    World w;
    w.seed = seed;
    w.num_persons = num_persons;
    w.num_countries = num_countries;
    Rng rng(seed);
    // The first persons cover the countries one-to-one so that every country
    // occurs as a trained answer (the "popular entities" analogue); the rest
    // are sampled.
    for (int p = 0; p < num_persons; ++p)
        w.citizen_of.push_back(p < num_countries
                                   ? p
                                   : static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(num_countries))));
    return w;
}

std::string world_to_json(const World& w, int num_languages, int num_templates) {
    ordered_json j;
    j["seed"] = w.seed;
    j["num_persons"] = w.num_persons;
    j["num_countries"] = w.num_countries;
    j["num_languages"] = num_languages;
    j["num_templates"] = num_templates;
    j["citizen_of"] = w.citizen_of;
    return j.dump(2) + "\n";
}

World world_from_json(const std::string& text, int* num_languages, int* num_templates) {
    ordered_json j = ordered_json::parse(text);
    World w;
    w.seed = j.at("seed").get<std::uint64_t>();
    w.num_persons = j.at("num_persons").get<int>();
    w.num_countries = j.at("num_countries").get<int>();
    w.citizen_of = j.at("citizen_of").get<std::vector<int>>();
    if (static_cast<int>(w.citizen_of.size()) != w.num_persons)
        throw std::invalid_argument("world json: citizen_of length does not match num_persons");
    for (int c : w.citizen_of)
        if (c < 0 || c >= w.num_countries) throw std::invalid_argument("world json: citizenship out of range");
    if (num_languages) *num_languages = j.at("num_languages").get<int>();
    if (num_templates) *num_templates = j.at("num_templates").get<int>();
    return w;
}

std::int64_t Vocab::id(const std::string& tok) const {
    auto it = index.find(tok);
    if (it == index.end()) throw std::invalid_argument("unknown token '" + tok + "'");
    return it->second;
}

std::string Vocab::text(const TokenSeq& seq) const {
    std::string out;
    for (size_t i = 0; i < seq.size(); ++i) {
        if (i) out += " ";
        out += tokens.at(static_cast<size_t>(seq[i]));
    }
    return out;
}

TokenSeq Vocab::parse(const std::string& s) const {
    TokenSeq out;
    std::istringstream ss(s);
    std::string tok;
    while (ss >> tok) out.push_back(id(tok));
    return out;
}

FactCorpus render_corpus(const World& w, int num_languages, std::int64_t max_vocab_size) {
    require(num_languages >= 1 && num_languages <= kMaxLanguages,
            "render_corpus: num_languages must be 1 or 2");
    FactCorpus corpus;
    corpus.num_languages = num_languages;
    corpus.num_templates = kNumTemplates;
    corpus.vocab = build_vocab(w, num_languages);
    if (max_vocab_size > 0 && static_cast<std::int64_t>(corpus.vocab.tokens.size()) > max_vocab_size)
        throw std::invalid_argument("render_corpus: vocabulary of " +
                                    std::to_string(corpus.vocab.tokens.size()) +
                                    " tokens overflows configured size " + std::to_string(max_vocab_size));
    const Vocab& v = corpus.vocab;

    for (int p = 0; p < w.num_persons; ++p) {
        for (int lang = 0; lang < num_languages; ++lang) {
            for (Relation r : kAllRelations) {
                for (int t = 0; t < kNumTemplates; ++t) {
                    const bool alias_applicable = r != Relation::AliasOf;
                    for (int surface = 0; surface < (alias_applicable ? 2 : 1); ++surface) {
                        FactRecord rec;
                        rec.person = p;
                        rec.lang = lang;
                        rec.tmpl = t;
                        rec.relation = r;
                        rec.alias_subject = surface == 1;
                        rec.subject_pos = 0;
                        const std::string subj = surface == 1 ? alias_tok(p, lang) : person_tok(p, lang);
                        rec.query = {v.id(relation_tok(r, t, lang)), v.id(subj)};
                        rec.subject_pos = 1;
                        rec.answer = {v.id(answer_token(w, r, p, lang))};
                        rec.fact_id = relation_name(r) + ":p" + std::to_string(p) + ":t" + std::to_string(t) +
                                      ":L" + std::to_string(lang + 1) + (surface == 1 ? ":alias" : "");
                        corpus.records.push_back(std::move(rec));
                    }
                }
            }
            // Negated citizenship: the rendered completion is a deterministic
            // country that is not the true citizenship.
            for (int t = 0; t < kNumTemplates; ++t) {
                FactRecord rec;
                rec.person = p;
                rec.lang = lang;
                rec.tmpl = t;
                rec.relation = Relation::CitizenOf;
                rec.negated = true;
                const int c_true = w.citizen_of[static_cast<size_t>(p)];
                const int c_neg = (c_true + 1) % w.num_countries;
                rec.query = {v.id(not_tok(lang)), v.id(relation_tok(Relation::CitizenOf, t, lang)),
                             v.id(person_tok(p, lang))};
                rec.subject_pos = 2;
                rec.answer = {v.id(country_tok(c_neg, lang))};
                rec.fact_id = "citizen-neg:p" + std::to_string(p) + ":t" + std::to_string(t) + ":L" +
                              std::to_string(lang + 1);
                corpus.records.push_back(std::move(rec));
            }
        }
    }
    return corpus;
}

std::string to_string(Category c) {
    switch (c) {
        case Category::LG: return "LG";
        case Category::CI: return "CI";
        case Category::CII: return "CII";
        case Category::SA: return "SA";
        case Category::PV: return "PV";
        case Category::RS: return "RS";
        case Category::NEG: return "NEG";
        case Category::XLING: return "XLING";
    }
    return "?";
}

Category category_from_string(const std::string& s) {
    if (s == "LG") return Category::LG;
    if (s == "CI") return Category::CI;
    if (s == "CII") return Category::CII;
    if (s == "SA") return Category::SA;
    if (s == "PV") return Category::PV;
    if (s == "RS") return Category::RS;
    if (s == "NEG") return Category::NEG;
    if (s == "XLING") return Category::XLING;
    throw std::invalid_argument("unknown ripple category '" + s + "'");
}

Expectation expectation_for(Category c) {
    switch (c) {
        case Category::PV:
        case Category::RS: return Expectation::ShouldPreserve;
        case Category::NEG: return Expectation::ShouldAvoid;
        default: return Expectation::ShouldChange;
    }
}

EditCase derive_ripples(const World& w, const FactCorpus& corpus, int person, int new_country) {
    require(person >= 0 && person < w.num_persons, "derive_ripples: person out of range");
    require(new_country >= 0 && new_country < w.num_countries, "derive_ripples: country out of range");
    const int old_country = w.citizen_of[static_cast<size_t>(person)];
    require(new_country != old_country, "derive_ripples: edit target equals current value");

    const Vocab& v = corpus.vocab;
    EditCase ec;
    ec.person = person;
    ec.old_country = old_country;
    ec.new_country = new_country;
    ec.edit_id = "p" + std::to_string(person) + ":c" + std::to_string(old_country) + "->c" +
                 std::to_string(new_country);
    ec.query = {v.id(relation_tok(Relation::CitizenOf, 0, 0)), v.id(person_tok(person, 0))};
    ec.subject_pos = 1;
    ec.old_answer = {v.id(country_tok(old_country, 0))};
    ec.new_answer = {v.id(country_tok(new_country, 0))};

    auto pair = [&](std::string pid, Category cat, TokenSeq q, TokenSeq post, TokenSeq pre) {
        RipplePair rp;
        rp.pair_id = std::move(pid);
        rp.category = cat;
        rp.expectation = expectation_for(cat);
        rp.query = std::move(q);
        rp.gold_post = std::move(post);
        rp.gold_pre = std::move(pre);
        rp.subject_pos = static_cast<std::int64_t>(rp.query.size()) - 1;
        ec.ripples.push_back(std::move(rp));
    };

    // LG: the edited fact re-queried through the second paraphrase template.
    pair("LG:t1", Category::LG,
         {v.id(relation_tok(Relation::CitizenOf, 1, 0)), v.id(person_tok(person, 0))},
         {v.id(country_tok(new_country, 0))}, {v.id(country_tok(old_country, 0))});
    // CI: both one-hop rules through the edited citizenship.
    pair("CI:speaks", Category::CI,
         {v.id(relation_tok(Relation::Speaks, 0, 0)), v.id(person_tok(person, 0))},
         {v.id(language_tok(w.official_language(new_country), 0))},
         {v.id(language_tok(w.official_language(old_country), 0))});
    pair("CI:currency", Category::CI,
         {v.id(relation_tok(Relation::UsesCurrency, 0, 0)), v.id(person_tok(person, 0))},
         {v.id(currency_tok(w.currency(new_country), 0))},
         {v.id(currency_tok(w.currency(old_country), 0))});
    // CII: two-hop composition person -> country -> capital.
    pair("CII:capital", Category::CII,
         {v.id(relation_tok(Relation::CapitalOfCitizenship, 0, 0)), v.id(person_tok(person, 0))},
         {v.id(capital_tok(w.capital(new_country), 0))},
         {v.id(capital_tok(w.capital(old_country), 0))});
    // SA: the edited fact asked through the subject's alias surface form.
    pair("SA:alias-subject", Category::SA,
         {v.id(relation_tok(Relation::CitizenOf, 0, 0)), v.id(alias_tok(person, 0))},
         {v.id(country_tok(new_country, 0))}, {v.id(country_tok(old_country, 0))});
    // PV: a fact about the same subject that the rules leave unchanged.
    pair("PV:alias", Category::PV,
         {v.id(relation_tok(Relation::AliasOf, 0, 0)), v.id(person_tok(person, 0))},
         {v.id(alias_tok(person, 0))}, {v.id(alias_tok(person, 0))});
    // RS: the edited relation about a different subject.
    if (w.num_persons >= 2) {
        const int other = (person + 1) % w.num_persons;
        const int other_c = w.citizen_of[static_cast<size_t>(other)];
        pair("RS:p" + std::to_string(other), Category::RS,
             {v.id(relation_tok(Relation::CitizenOf, 0, 0)), v.id(person_tok(other, 0))},
             {v.id(country_tok(other_c, 0))}, {v.id(country_tok(other_c, 0))});
    }
    // NEG: the negated query must avoid the edited target.
    pair("NEG:citizen", Category::NEG,
         {v.id(not_tok(0)), v.id(relation_tok(Relation::CitizenOf, 0, 0)), v.id(person_tok(person, 0))},
         {v.id(country_tok(new_country, 0))}, {v.id(country_tok(old_country, 0))});
    // XLING: the edited fact queried in the other surface language.
    if (corpus.num_languages >= 2) {
        pair("XLING:citizen", Category::XLING,
             {v.id(relation_tok(Relation::CitizenOf, 0, 1)), v.id(person_tok(person, 1))},
             {v.id(country_tok(new_country, 1))}, {v.id(country_tok(old_country, 1))});
    }
    return ec;
}

void save_cases_jsonl(const std::string& path, const std::vector<EditCase>& cases, const Vocab& vocab) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write cases file: " + path);
    for (const auto& ec : cases) {
        ordered_json j;
        j["edit"]["query"] = vocab.text(ec.query);
        j["edit"]["old_answer"] = vocab.text(ec.old_answer);
        j["edit"]["new_answer"] = vocab.text(ec.new_answer);
        j["edit"]["subject_pos"] = ec.subject_pos;
        ordered_json ripples = ordered_json::array();
        for (const auto& rp : ec.ripples) {
            ordered_json r;
            r["query"] = vocab.text(rp.query);
            r["answer"] = vocab.text(rp.gold_post);
            r["category"] = to_string(rp.category);
            r["pre_edit_answer"] = vocab.text(rp.gold_pre);
            r["subject_pos"] = rp.subject_pos;
            ripples.push_back(std::move(r));
        }
        j["ripples"] = std::move(ripples);
        out << j.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

std::vector<EditCase> load_rippleedits_jsonl(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open cases file: " + path);
    std::vector<EditCase> cases;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const std::string where = path + " line " + std::to_string(lineno);
        ordered_json j;
        try {
            j = ordered_json::parse(line);
        } catch (const std::exception& e) {
            throw std::invalid_argument(where + ": malformed JSON (" + e.what() + ")");
        }
        try {
            EditCase ec;
            ec.edit_id = "case:" + std::to_string(lineno);
            const auto& edit = j.at("edit");
            ec.query = vocab.parse(edit.at("query").get<std::string>());
            ec.old_answer = vocab.parse(edit.at("old_answer").get<std::string>());
            ec.new_answer = vocab.parse(edit.at("new_answer").get<std::string>());
            ec.subject_pos = edit.value("subject_pos", std::int64_t{0});
            int pidx = 0;
            for (const auto& r : j.at("ripples")) {
                RipplePair rp;
                rp.category = category_from_string(r.at("category").get<std::string>());
                rp.expectation = expectation_for(rp.category);
                rp.query = vocab.parse(r.at("query").get<std::string>());
                rp.gold_post = vocab.parse(r.at("answer").get<std::string>());
                rp.gold_pre = vocab.parse(r.value("pre_edit_answer", std::string{}));
                rp.subject_pos = r.value("subject_pos", std::int64_t{0});
                rp.pair_id = to_string(rp.category) + ":" + std::to_string(pidx++);
                ec.ripples.push_back(std::move(rp));
            }
            cases.push_back(std::move(ec));
        } catch (const std::exception& e) {
            throw std::invalid_argument(where + ": " + e.what());
        }
    }
    return cases;
}

void save_corpus_jsonl(const std::string& path, const FactCorpus& corpus) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write corpus file: " + path);
    for (const auto& rec : corpus.records) {
        ordered_json j;
        j["query"] = corpus.vocab.text(rec.query);
        j["answer"] = corpus.vocab.text(rec.answer);
        j["fact_id"] = rec.fact_id;
        j["lang"] = "L" + std::to_string(rec.lang + 1);
        out << j.dump() << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace ripple::worldgen
