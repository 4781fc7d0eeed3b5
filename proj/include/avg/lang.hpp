#pragma once

#include <map>
#include <string>
#include <vector>

#include "avg/error.hpp"

namespace avg::lang {

// Character alphabet shared by the CTC head and the attention decoder.
// ids 0..25 = 'a'..'z', 26 = space, 27 = apostrophe, 28 = unk.
constexpr int kAlphabetSize = 29;
constexpr int kSpaceId = 26;
constexpr int kApostropheId = 27;
constexpr int kUnkId = 28;

// CTC adds a blank class.
constexpr int kCtcBlank = 29;
constexpr int kCtcClasses = 30;

// The decoder adds sos/eos/pad instead.
constexpr int kSos = 29;
constexpr int kEos = 30;
constexpr int kPad = 31;
constexpr int kDecClasses = 32;

// Lowercases letters; unsupported characters map to unk.
std::vector<int> encode_text(const std::string& text);
std::string decode_tokens(const std::vector<int>& ids);  // unk prints '?'

// Bundled 20-phoneme inventory partitioned into 8 articulator groups.
struct PhonemeDef {
  std::string label;
  std::string group;
};
const std::vector<PhonemeDef>& phoneme_inventory();
int phoneme_index(const std::string& label);  // -1 when unknown

using VisemeMap = std::map<std::string, std::string>;
using Lexicon = std::map<std::string, std::vector<std::string>>;

// Built-in copies of the bundled asset tables; the shipped TSV files must
// match these (unit-tested with a pinned checksum).
const VisemeMap& builtin_viseme_map();
const Lexicon& builtin_lexicon();

// TSV loaders: "phoneme<TAB>viseme" / "word<TAB>ph ph ph ..." per line,
// '#' comments allowed.
VisemeMap load_viseme_map(const std::string& path);
Lexicon load_lexicon(const std::string& path);

// Word-by-word grapheme-to-phoneme conversion: lexicon lookup first, then a
// deterministic letter-to-sound fallback for out-of-vocabulary words.
std::vector<std::string> g2p(const std::string& text, const Lexicon& lexicon);

// Per-token phoneme-to-viseme collapse; unknown phoneme is a contract error.
std::vector<std::string> to_visemes(const std::vector<std::string>& phonemes,
                                    const VisemeMap& map);

}  // namespace avg::lang
