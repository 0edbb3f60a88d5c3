#include <doctest.h>

#include <fstream>
#include <set>

#include "ripple/worldgen.hpp"

using namespace ripple;
using worldgen::Category;
using worldgen::Expectation;

TEST_CASE("generate_world: counting, determinism and rule closure") {
    const worldgen::World w = worldgen::generate_world(1, 3, 42);
    CHECK(w.citizen_of.size() == 1);  // one citizenship fact per person
    CHECK(w.speaks(0) == w.official_language(w.citizen_of[0]));
    CHECK(w.uses_currency(0) == w.currency(w.citizen_of[0]));

    const worldgen::World again = worldgen::generate_world(1, 3, 42);
    CHECK(w.citizen_of == again.citizen_of);

    const worldgen::World other = worldgen::generate_world(12, 5, 43);
    for (int p = 0; p < other.num_persons; ++p)
        CHECK(other.speaks(p) == other.official_language(other.citizen_of[static_cast<size_t>(p)]));

    CHECK_THROWS_AS(worldgen::generate_world(1, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(worldgen::generate_world(0, 3, 1), std::invalid_argument);
}

TEST_CASE("render_corpus: record counting, disjoint languages, vocabulary") {
    const worldgen::World w = worldgen::generate_world(2, 3, 7);
    const worldgen::FactCorpus corpus = worldgen::render_corpus(w, 2);

    // one fact (person 0 citizenship, canonical subject): 2 templates x 2 languages
    int count = 0;
    std::vector<worldgen::FactRecord> citizen_recs;
    for (const auto& rec : corpus.records)
        if (rec.person == 0 && rec.relation == worldgen::Relation::CitizenOf && !rec.negated &&
            !rec.alias_subject) {
            ++count;
            citizen_recs.push_back(rec);
        }
    CHECK(count == 4);

    // L1 and L2 renderings of the same fact share no surface tokens
    std::set<std::int64_t> l1_tokens, l2_tokens;
    for (const auto& rec : citizen_recs) {
        auto& dst = rec.lang == 0 ? l1_tokens : l2_tokens;
        dst.insert(rec.query.begin(), rec.query.end());
        dst.insert(rec.answer.begin(), rec.answer.end());
    }
    for (std::int64_t tok : l1_tokens) CHECK(l2_tokens.count(tok) == 0);

    // every token of every record is covered by the vocabulary
    for (const auto& rec : corpus.records) {
        for (auto t : rec.query) CHECK((t >= 0 && t < static_cast<std::int64_t>(corpus.vocab.tokens.size())));
        for (auto t : rec.answer) CHECK((t >= 0 && t < static_cast<std::int64_t>(corpus.vocab.tokens.size())));
    }

    // queries are unique per (fact, template, language, surface): no query maps
    // to two different answers
    std::map<worldgen::TokenSeq, worldgen::TokenSeq> mapping;
    for (const auto& rec : corpus.records) {
        auto [it, inserted] = mapping.emplace(rec.query, rec.answer);
        if (!inserted) CHECK(it->second == rec.answer);
    }

    CHECK_THROWS_AS((void)worldgen::render_corpus(w, 2, 10), std::invalid_argument);  // vocab overflow
}

TEST_CASE("derive_ripples: golds recompute through the rules") {
    const worldgen::World w = worldgen::generate_world(3, 4, 11);
    const worldgen::FactCorpus corpus = worldgen::render_corpus(w, 2);
    const int person = 0;
    const int old_c = w.citizen_of[0];
    const int new_c = (old_c + 1) % 4;
    const worldgen::EditCase ec = worldgen::derive_ripples(w, corpus, person, new_c);

    auto find = [&](Category cat, const char* pair_id = nullptr) -> const worldgen::RipplePair& {
        for (const auto& rp : ec.ripples)
            if (rp.category == cat && (!pair_id || rp.pair_id == pair_id)) return rp;
        REQUIRE(false);
        return ec.ripples.front();
    };

    // citizenship edit ripples to the spoken language of the new country
    const auto& speaks = find(Category::CI, "CI:speaks");
    CHECK(corpus.vocab.tokens[static_cast<size_t>(speaks.gold_post[0])] ==
          "lng" + std::to_string(w.official_language(new_c)));
    CHECK(speaks.expectation == Expectation::ShouldChange);

    // compositional currency pair: currency of the citizenship country
    const auto& cur = find(Category::CI, "CI:currency");
    CHECK(corpus.vocab.tokens[static_cast<size_t>(cur.gold_post[0])] ==
          "cur" + std::to_string(w.currency(new_c)));

    // preservation pairs keep their pre-edit gold
    const auto& pv = find(Category::PV);
    CHECK(pv.gold_post == pv.gold_pre);
    const auto& rs = find(Category::RS);
    CHECK(rs.gold_post == rs.gold_pre);

    // negation carries the edited target as the forbidden completion
    const auto& neg = find(Category::NEG);
    CHECK(neg.gold_post == ec.new_answer);
    CHECK(neg.expectation == Expectation::ShouldAvoid);

    // every enabled category appears at least once
    for (Category cat : {Category::LG, Category::CI, Category::CII, Category::SA, Category::PV,
                         Category::RS, Category::NEG, Category::XLING})
        CHECK(std::any_of(ec.ripples.begin(), ec.ripples.end(),
                          [&](const auto& rp) { return rp.category == cat; }));

    CHECK_THROWS_AS((void)worldgen::derive_ripples(w, corpus, person, old_c), std::invalid_argument);
}

TEST_CASE("rule soundness: pair golds equal a re-derived closure under the edit") {
    const worldgen::World w = worldgen::generate_world(5, 4, 23);
    const worldgen::FactCorpus corpus = worldgen::render_corpus(w, 2);
    for (int person = 0; person < w.num_persons; ++person) {
        const int new_c = (w.citizen_of[static_cast<size_t>(person)] + 2) % 4;
        if (new_c == w.citizen_of[static_cast<size_t>(person)]) continue;
        const worldgen::EditCase ec = worldgen::derive_ripples(w, corpus, person, new_c);

        worldgen::World edited = w;
        edited.citizen_of[static_cast<size_t>(person)] = new_c;
        const auto& v = corpus.vocab;
        for (const auto& rp : ec.ripples) {
            const std::string gold = v.tokens[static_cast<size_t>(rp.gold_post[0])];
            switch (rp.category) {
                case Category::LG:
                case Category::SA:
                case Category::NEG:
                    CHECK(gold == "c" + std::to_string(edited.citizen_of[static_cast<size_t>(person)]));
                    break;
                case Category::CI:
                    CHECK((gold == "lng" + std::to_string(edited.speaks(person)) ||
                           gold == "cur" + std::to_string(edited.uses_currency(person))));
                    break;
                case Category::CII:
                    CHECK(gold == "cap" + std::to_string(edited.capital_of_citizenship(person)));
                    break;
                case Category::PV:
                    CHECK(gold == "ali" + std::to_string(edited.alias_of(person)));
                    break;
                case Category::RS: {
                    const int other = (person + 1) % edited.num_persons;
                    CHECK(gold == "c" + std::to_string(edited.citizen_of[static_cast<size_t>(other)]));
                    break;
                }
                case Category::XLING:
                    CHECK(gold == "cb" + std::to_string(edited.citizen_of[static_cast<size_t>(person)]));
                    break;
            }
        }
    }
}

TEST_CASE("cases JSONL: round trip, parse errors with line numbers") {
    const worldgen::World w = worldgen::generate_world(4, 4, 5);
    const worldgen::FactCorpus corpus = worldgen::render_corpus(w, 2);
    std::vector<worldgen::EditCase> cases;
    cases.push_back(worldgen::derive_ripples(w, corpus, 0, (w.citizen_of[0] + 1) % 4));
    cases.push_back(worldgen::derive_ripples(w, corpus, 2, (w.citizen_of[2] + 3) % 4));

    const std::string path = "wg_cases_test.jsonl";
    worldgen::save_cases_jsonl(path, cases, corpus.vocab);
    const auto loaded = worldgen::load_rippleedits_jsonl(path, corpus.vocab);
    REQUIRE(loaded.size() == cases.size());
    CHECK(loaded[0] == cases[0]);
    CHECK(loaded[1] == cases[1]);

    SUBCASE("empty file loads as an empty list") {
        std::ofstream(path).close();
        CHECK(worldgen::load_rippleedits_jsonl(path, corpus.vocab).empty());
    }
    SUBCASE("a minimal well-formed line with two ripples parses") {
        std::ofstream out(path);
        out << R"({"edit": {"query": "p0 citizenq0", "old_answer": "c0", "new_answer": "c1"}, )"
            << R"("ripples": [{"query": "p0 speaksq0", "answer": "lng1", "category": "CI"}, )"
            << R"({"query": "p1 citizenq0", "answer": "c2", "category": "RS"}]})" << "\n";
        out.close();
        const auto got = worldgen::load_rippleedits_jsonl(path, corpus.vocab);
        REQUIRE(got.size() == 1);
        CHECK(got[0].ripples.size() == 2);
        CHECK(got[0].ripples[0].category == Category::CI);
        CHECK(got[0].ripples[1].expectation == Expectation::ShouldPreserve);
    }
    SUBCASE("missing new_answer is reported with its line number") {
        std::ofstream out(path);
        out << R"({"edit": {"query": "p0 citizenq0", "old_answer": "c0"}, "ripples": []})" << "\n";
        out.close();
        CHECK_THROWS_WITH_AS((void)worldgen::load_rippleedits_jsonl(path, corpus.vocab),
                             doctest::Contains("line 1"), std::invalid_argument);
    }
    SUBCASE("unknown category and malformed JSON are rejected") {
        std::ofstream out(path);
        out << R"({"edit": {"query": "p0 citizenq0", "old_answer": "c0", "new_answer": "c1"}, )"
            << R"("ripples": [{"query": "p0 speaksq0", "answer": "lng1", "category": "WAT"}]})" << "\n";
        out.close();
        CHECK_THROWS_AS((void)worldgen::load_rippleedits_jsonl(path, corpus.vocab),
                        std::invalid_argument);

        std::ofstream bad(path);
        bad << "{this is not json\n";
        bad.close();
        CHECK_THROWS_WITH_AS((void)worldgen::load_rippleedits_jsonl(path, corpus.vocab),
                             doctest::Contains("line 1"), std::invalid_argument);
    }
    std::remove(path.c_str());
}

TEST_CASE("world JSON snapshot round-trips") {
    const worldgen::World w = worldgen::generate_world(6, 5, 99);
    const std::string text = worldgen::world_to_json(w, 2, 2);
    int langs = 0, tmpls = 0;
    const worldgen::World back = worldgen::world_from_json(text, &langs, &tmpls);
    CHECK(back.citizen_of == w.citizen_of);
    CHECK(back.num_countries == w.num_countries);
    CHECK(langs == 2);
    CHECK(tmpls == 2);
}
