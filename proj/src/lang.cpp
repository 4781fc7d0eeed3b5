#include "avg/lang.hpp"

#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

namespace avg::lang {

std::vector<int> encode_text(const std::string& text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (char raw : text) {
    unsigned char c = static_cast<unsigned char>(raw);
    if (std::isupper(c)) c = static_cast<unsigned char>(std::tolower(c));
    if (c >= 'a' && c <= 'z')
      out.push_back(c - 'a');
    else if (c == ' ')
      out.push_back(kSpaceId);
    else if (c == '\'')
      out.push_back(kApostropheId);
    else
      out.push_back(kUnkId);
  }
  return out;
}

std::string decode_tokens(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (0 <= id && id < 26)
      out.push_back(static_cast<char>('a' + id));
    else if (id == kSpaceId)
      out.push_back(' ');
    else if (id == kApostropheId)
      out.push_back('\'');
    else if (id == kUnkId)
      out.push_back('?');
    else
      throw ContractError("decode_tokens: id " + std::to_string(id) +
                          " is outside the text alphabet");
  }
  return out;
}

const std::vector<PhonemeDef>& phoneme_inventory() {
  static const std::vector<PhonemeDef> inv = {
      {"p", "bilabial"},    {"b", "bilabial"},    {"m", "bilabial"},
      {"f", "labiodental"}, {"v", "labiodental"}, {"t", "alveolar"},
      {"d", "alveolar"},    {"s", "alveolar"},    {"n", "alveolar"},
      {"k", "velar"},       {"g", "velar"},       {"aa", "open"},
      {"ae", "open"},       {"eh", "mid"},        {"er", "mid"},
      {"ih", "spread"},     {"iy", "spread"},     {"uw", "round"},
      {"ow", "round"},      {"w", "round"},
  };
  return inv;
}

int phoneme_index(const std::string& label) {
  const auto& inv = phoneme_inventory();
  for (size_t i = 0; i < inv.size(); ++i)
    if (inv[i].label == label) return static_cast<int>(i);
  return -1;
}

const VisemeMap& builtin_viseme_map() {
  static const VisemeMap map = {
      {"p", "p"},  {"b", "p"},  {"m", "p"},  {"f", "f"},  {"v", "f"},
      {"t", "t"},  {"d", "t"},  {"n", "t"},  {"s", "s"},  {"k", "k"},
      {"g", "k"},  {"aa", "a"}, {"ae", "a"}, {"eh", "E"}, {"er", "E"},
      {"ih", "i"}, {"iy", "i"}, {"uw", "u"}, {"w", "u"},  {"ow", "o"},
  };
  return map;
}

const Lexicon& builtin_lexicon() {
  static const Lexicon lex = [] {
    Lexicon l;
    auto add = [&l](const std::string& w, std::initializer_list<const char*> ph) {
      std::vector<std::string> seq;
      for (const char* p : ph) seq.emplace_back(p);
      l[w] = std::move(seq);
    };
    add("bob", {"b", "aa", "b"});
    add("pop", {"p", "aa", "p"});
    add("mom", {"m", "aa", "m"});
    add("map", {"m", "ae", "p"});
    add("bat", {"b", "ae", "t"});
    add("pat", {"p", "ae", "t"});
    add("mat", {"m", "ae", "t"});
    add("tab", {"t", "ae", "b"});
    add("nap", {"n", "ae", "p"});
    add("pan", {"p", "ae", "n"});
    add("ban", {"b", "ae", "n"});
    add("man", {"m", "ae", "n"});
    add("mud", {"m", "aa", "d"});
    add("bud", {"b", "aa", "d"});
    add("bus", {"b", "aa", "s"});
    add("must", {"m", "aa", "s", "t"});
    add("just", {"d", "aa", "s", "t"});
    add("dust", {"d", "aa", "s", "t"});
    add("nut", {"n", "aa", "t"});
    add("sun", {"s", "aa", "n"});
    add("ten", {"t", "eh", "n"});
    add("den", {"d", "eh", "n"});
    add("net", {"n", "eh", "t"});
    add("men", {"m", "eh", "n"});
    add("pen", {"p", "eh", "n"});
    add("bed", {"b", "eh", "d"});
    add("keg", {"k", "eh", "g"});
    add("get", {"g", "eh", "t"});
    add("kit", {"k", "ih", "t"});
    add("bit", {"b", "ih", "t"});
    add("pit", {"p", "ih", "t"});
    add("sit", {"s", "ih", "t"});
    add("fit", {"f", "ih", "t"});
    add("fin", {"f", "ih", "n"});
    add("win", {"w", "ih", "n"});
    add("wit", {"w", "ih", "t"});
    add("feet", {"f", "iy", "t"});
    add("seen", {"s", "iy", "n"});
    add("team", {"t", "iy", "m"});
    add("mean", {"m", "iy", "n"});
    add("beam", {"b", "iy", "m"});
    add("keep", {"k", "iy", "p"});
    add("boot", {"b", "uw", "t"});
    add("moon", {"m", "uw", "n"});
    add("soon", {"s", "uw", "n"});
    add("food", {"f", "uw", "d"});
    add("woo", {"w", "uw"});
    add("wood", {"w", "uw", "d"});
    add("boat", {"b", "ow", "t"});
    add("moat", {"m", "ow", "t"});
    add("bone", {"b", "ow", "n"});
    add("foam", {"f", "ow", "m"});
    add("vote", {"v", "ow", "t"});
    add("van", {"v", "ae", "n"});
    add("vat", {"v", "ae", "t"});
    add("fan", {"f", "ae", "n"});
    add("fat", {"f", "ae", "t"});
    add("sad", {"s", "ae", "d"});
    add("mask", {"m", "ae", "s", "k"});
    add("task", {"t", "ae", "s", "k"});
    add("desk", {"d", "eh", "s", "k"});
    add("dusk", {"d", "aa", "s", "k"});
    add("bird", {"b", "er", "d"});
    add("fern", {"f", "er", "n"});
    add("turn", {"t", "er", "n"});
    add("burn", {"b", "er", "n"});
    return l;
  }();
  return lex;
}

namespace {

// Deterministic letter-to-sound fallback, total over a-z. Apostrophes and
// anything else contribute nothing.
const char* letter_sound(char c) {
  static const std::array<const char*, 26> table = {
      "ae", "b", "k", "d", "eh", "f", "g",  "aa", "ih", "d", "k", "n", "m",
      "n",  "ow", "p", "k", "er", "s", "t", "aa", "v",  "w", "s", "ih", "s"};
  if (c < 'a' || c > 'z') return nullptr;
  return table[static_cast<size_t>(c - 'a')];
}

}  // namespace

std::vector<std::string> g2p(const std::string& text, const Lexicon& lexicon) {
  std::vector<std::string> out;
  std::istringstream ss(text);
  std::string word;
  while (ss >> word) {
    for (auto& ch : word) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    auto it = lexicon.find(word);
    if (it != lexicon.end()) {
      out.insert(out.end(), it->second.begin(), it->second.end());
      continue;
    }
    for (char c : word)
      if (const char* p = letter_sound(c)) out.emplace_back(p);
  }
  return out;
}

std::vector<std::string> to_visemes(const std::vector<std::string>& phonemes,
                                    const VisemeMap& map) {
  std::vector<std::string> out;
  out.reserve(phonemes.size());
  for (const auto& p : phonemes) {
    auto it = map.find(p);
    AVG_CHECK(it != map.end(), ContractError, "to_visemes: phoneme '" + p + "' not in map");
    out.push_back(it->second);
  }
  return out;
}

namespace {

[[noreturn]] void tsv_fail(const std::string& path, int line, const std::string& what) {
  throw ParseError(path + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

VisemeMap load_viseme_map(const std::string& path) {
  std::ifstream in(path);
  AVG_CHECK(in.good(), IoError, "cannot open viseme table: " + path);
  VisemeMap map;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) tsv_fail(path, lineno, "expected phoneme<TAB>viseme");
    std::string ph = line.substr(0, tab);
    std::string vis = line.substr(tab + 1);
    while (!vis.empty() && (vis.back() == '\r' || vis.back() == ' ')) vis.pop_back();
    if (ph.empty() || vis.empty()) tsv_fail(path, lineno, "empty phoneme or viseme");
    if (phoneme_index(ph) < 0) tsv_fail(path, lineno, "unknown phoneme '" + ph + "'");
    map[ph] = vis;
  }
  for (const auto& def : phoneme_inventory())
    AVG_CHECK(map.count(def.label), ValidationError,
              path + ": viseme table misses phoneme '" + def.label + "'");
  return map;
}

Lexicon load_lexicon(const std::string& path) {
  std::ifstream in(path);
  AVG_CHECK(in.good(), IoError, "cannot open lexicon: " + path);
  Lexicon lex;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto tab = line.find('\t');
    if (tab == std::string::npos) tsv_fail(path, lineno, "expected word<TAB>phonemes");
    std::string word = line.substr(0, tab);
    std::istringstream ph(line.substr(tab + 1));
    std::vector<std::string> seq;
    std::string tok;
    while (ph >> tok) {
      if (phoneme_index(tok) < 0) tsv_fail(path, lineno, "unknown phoneme '" + tok + "'");
      seq.push_back(tok);
    }
    if (word.empty() || seq.empty()) tsv_fail(path, lineno, "empty word or pronunciation");
    lex[word] = std::move(seq);
  }
  return lex;
}

}  // namespace avg::lang
