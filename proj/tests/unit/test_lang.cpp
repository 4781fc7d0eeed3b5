#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "avg/lang.hpp"

using namespace avg;
using namespace avg::lang;

TEST_CASE("text encoding round trip and id layout") {
  std::string s = "hello world's end";
  auto ids = encode_text(s);
  CHECK(decode_tokens(ids) == s);
  CHECK(encode_text("a")[0] == 0);
  CHECK(encode_text("z")[0] == 25);
  CHECK(encode_text(" ")[0] == kSpaceId);
  CHECK(encode_text("'")[0] == kApostropheId);
  CHECK(encode_text("?")[0] == kUnkId);
  CHECK(encode_text("ABC") == encode_text("abc"));
  CHECK(kAlphabetSize == 29);
  CHECK(kCtcClasses == 30);
  CHECK(kDecClasses == 32);
  CHECK_THROWS_AS(decode_tokens({kCtcBlank}), ContractError);
}

TEST_CASE("phoneme inventory: 20 phonemes, 8 groups, required classes") {
  const auto& inv = phoneme_inventory();
  CHECK(inv.size() == 20);
  std::set<std::string> groups, labels;
  for (const auto& def : inv) {
    groups.insert(def.group);
    CHECK(labels.insert(def.label).second);  // labels unique
  }
  CHECK(groups.size() == 8);
  for (const char* need : {"p", "b", "m", "aa"}) CHECK(phoneme_index(need) >= 0);
  CHECK(phoneme_index("zz") == -1);
  // bilabials share one group
  const auto& i = inv;
  auto group_of = [&](const char* l) { return i[static_cast<size_t>(phoneme_index(l))].group; };
  CHECK(group_of("p") == group_of("b"));
  CHECK(group_of("b") == group_of("m"));
  CHECK(group_of("aa") != group_of("p"));
}

TEST_CASE("viseme map is total and groups bilabials") {
  const auto& map = builtin_viseme_map();
  for (const auto& def : phoneme_inventory()) CHECK(map.count(def.label) == 1);
  CHECK(map.at("p") == map.at("b"));
  CHECK(map.at("b") == map.at("m"));
  CHECK(map.at("k") != map.at("b"));
  CHECK(map.at("uw") != map.at("iy"));
}

TEST_CASE("g2p uses the lexicon first, then letter fallback") {
  const auto& lex = builtin_lexicon();
  CHECK(g2p("pat", lex) == std::vector<std::string>{"p", "ae", "t"});
  CHECK(g2p("must", lex) == std::vector<std::string>{"m", "aa", "s", "t"});
  CHECK(g2p("bob pop", lex) ==
        std::vector<std::string>{"b", "aa", "b", "p", "aa", "p"});
  // not in the lexicon: deterministic letter-to-sound
  auto fb = g2p("xq", lex);
  CHECK(fb == std::vector<std::string>{"s", "k"});
  CHECK(g2p("PAT", lex) == g2p("pat", lex));
  CHECK(g2p("", lex).empty());
  // every fallback output stays inside the inventory
  for (const auto& ph : g2p("abcdefghijklmnopqrstuvwxyz", lex))
    CHECK(phoneme_index(ph) >= 0);
}

TEST_CASE("to_visemes collapses and rejects unknown phonemes") {
  const auto& map = builtin_viseme_map();
  auto v = to_visemes({"p", "aa", "t"}, map);
  CHECK(v.size() == 3);
  CHECK(v[0] == map.at("p"));
  CHECK_THROWS_AS(to_visemes({"qx"}, map), ContractError);
  // pat/bat collapse to the same viseme string
  const auto& lex = builtin_lexicon();
  CHECK(to_visemes(g2p("pat", lex), map) == to_visemes(g2p("bat", lex), map));
  CHECK(to_visemes(g2p("cat", lex), map) != to_visemes(g2p("bat", lex), map));
}

TEST_CASE("lexicon pronunciations stay inside the inventory") {
  for (const auto& [word, seq] : builtin_lexicon()) {
    CHECK(!seq.empty());
    for (const auto& ph : seq) CHECK(phoneme_index(ph) >= 0);
  }
}

TEST_CASE("TSV loaders round trip the builtin tables") {
  namespace fs = std::filesystem;
  auto vp = (fs::temp_directory_path() / "avg_vis.tsv").string();
  auto lp = (fs::temp_directory_path() / "avg_lex.tsv").string();
  {
    std::ofstream out(vp);
    out << "# phoneme\tviseme\n";
    for (const auto& [ph, vis] : builtin_viseme_map()) out << ph << "\t" << vis << "\n";
  }
  {
    std::ofstream out(lp);
    for (const auto& [word, seq] : builtin_lexicon()) {
      out << word << "\t";
      for (size_t i = 0; i < seq.size(); ++i) out << (i ? " " : "") << seq[i];
      out << "\n";
    }
  }
  CHECK(load_viseme_map(vp) == builtin_viseme_map());
  CHECK(load_lexicon(lp) == builtin_lexicon());

  {
    std::ofstream out(vp);
    out << "p p\n";  // no tab
  }
  CHECK_THROWS_AS(load_viseme_map(vp), ParseError);
  {
    std::ofstream out(vp);
    out << "qq\tx\n";  // unknown phoneme
  }
  CHECK_THROWS_AS(load_viseme_map(vp), ParseError);
  {
    std::ofstream out(vp);
    out << "p\tx\n";  // incomplete table
  }
  CHECK_THROWS_AS(load_viseme_map(vp), ValidationError);
  {
    std::ofstream out(lp);
    out << "word\tqq\n";
  }
  CHECK_THROWS_AS(load_lexicon(lp), ParseError);
  std::remove(vp.c_str());
  std::remove(lp.c_str());
}
