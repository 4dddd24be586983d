#include "cbrl/vocab.hpp"

#include <cstring>

#include "cbrl/rng.hpp"

namespace cbrl {

const Vocab& Vocab::instance() {
  static const Vocab vocab;
  return vocab;
}

Vocab::Vocab() {
  auto add = [&](const std::string& name, const std::string& decoded) {
    symbols_.push_back(name);
    decoded_.push_back(decoded);
    return static_cast<int>(symbols_.size()) - 1;
  };

  add("<pad>", "");
  add("<bos>", "");
  add("<eos>", "");
  add("<unk>", "");
  add("<|sys|>", "");
  add("<|usr|>", "");
  add("<|ast|>", "");

  const char* tags[] = {"</think><answer>", "</answer>", "</think>", "<answer>",
                        "<think>"};
  for (const char* tag : tags) {
    int id = add(tag, tag);
    multichar_.emplace_back(tag, id);
  }

  std::memset(char_to_id_, -1, sizeof(char_to_id_));
  std::string chars = " \n";
  for (char c = 'a'; c <= 'z'; ++c) chars += c;
  for (char c = 'A'; c <= 'Z'; ++c) chars += c;
  for (char c = '0'; c <= '9'; ++c) chars += c;
  chars += "!\"'()*+,-./:;<=>?[]_";
  for (char c : chars) {
    int id = add(std::string(1, c), std::string(1, c));
    char_to_id_[static_cast<unsigned char>(c)] = id;
  }

  std::string blob;
  for (const auto& s : symbols_) {
    blob += s;
    blob += '\0';
  }
  fingerprint_ = fnv1a64(blob.data(), blob.size());
}

std::vector<int> Vocab::encode_text(const std::string& text) const {
  std::vector<int> out;
  out.reserve(text.size());
  size_t i = 0;
  while (i < text.size()) {
    bool matched = false;
    if (text[i] == '<') {
      for (const auto& [tag, id] : multichar_) {
        if (text.compare(i, tag.size(), tag) == 0) {
          out.push_back(id);
          i += tag.size();
          matched = true;
          break;
        }
      }
    }
    if (!matched) {
      int id = char_to_id_[static_cast<unsigned char>(text[i])];
      out.push_back(id < 0 ? unk() : id);
      ++i;
    }
  }
  return out;
}

std::string Vocab::decode(const std::vector<int>& tokens) const {
  std::string out;
  for (int id : tokens) {
    if (id >= 0 && id < size()) out += decoded_[static_cast<size_t>(id)];
  }
  return out;
}

std::vector<int> Vocab::encode_prompt(const ChatPrompt& prompt) const {
  std::vector<int> out;
  out.push_back(bos());
  for (const auto& turn : prompt.turns) {
    switch (turn.role) {
      case Role::system: out.push_back(sys()); break;
      case Role::user: out.push_back(usr()); break;
      case Role::assistant: out.push_back(ast()); break;
    }
    auto content = encode_text(turn.content);
    out.insert(out.end(), content.begin(), content.end());
    if (turn.role == Role::assistant && !turn.content.empty()) out.push_back(eos());
  }
  if (!prompt.turns.empty() && prompt.turns.back().role == Role::user)
    out.push_back(ast());
  return out;
}

}  // namespace cbrl
