#pragma once

#include <string>
#include <vector>

#include "cbrl/prompting.hpp"

namespace cbrl {

// Fixed character-level vocabulary: the ASCII characters the task renderers
// emit, plus structural symbols. The response-format tag strings tokenize
// atomically (longest match), so the think/answer scaffold is a short token
// pattern rather than a 30-character exact sequence; decoding expands the
// tags back to their literal text, which keeps every reward computation
// purely text-level.
class Vocab {
 public:
  static const Vocab& instance();

  int size() const { return static_cast<int>(symbols_.size()); }

  // Special token ids.
  int pad() const { return 0; }
  int bos() const { return 1; }
  int eos() const { return 2; }
  int unk() const { return 3; }
  int sys() const { return 4; }
  int usr() const { return 5; }
  int ast() const { return 6; }

  // Text of symbol id (structural symbols decode to "").
  const std::string& decoded_text(int id) const { return decoded_[static_cast<size_t>(id)]; }
  const std::string& symbol_name(int id) const { return symbols_[static_cast<size_t>(id)]; }

  // Character-level encoding with longest-match tag tokens; unknown
  // characters map to UNK.
  std::vector<int> encode_text(const std::string& text) const;

  // Concatenated decoded text; structural tokens contribute nothing.
  std::string decode(const std::vector<int>& tokens) const;

  // BOS, then per turn a role token and the turn's content; non-empty
  // assistant turns close with EOS (matching how sampled completions end).
  // A prompt ending on a user turn gains a trailing assistant role token as
  // the generation cue, so encode(p) is a prefix of encode(p + reply).
  std::vector<int> encode_prompt(const ChatPrompt& prompt) const;

  // Stable fingerprint of the symbol table (checkpoint compatibility check).
  uint64_t fingerprint() const { return fingerprint_; }

 private:
  Vocab();
  std::vector<std::string> symbols_;  // display names
  std::vector<std::string> decoded_;  // decoded text per id
  std::vector<std::pair<std::string, int>> multichar_;  // longest first
  int char_to_id_[256];
  uint64_t fingerprint_ = 0;
};

}  // namespace cbrl
