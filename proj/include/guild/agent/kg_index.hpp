#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "guild/story/story.hpp"
#include "guild/tw/game_spec.hpp"

namespace guild::agent {

// Fixed enumeration of every fact the game can ever produce: agent position,
// item positions, holdings, slain creatures. A fact set becomes a multi-hot
// vector over this universe.
class KgIndex {
 public:
  explicit KgIndex(const tw::GameSpec& spec);

  int bits() const { return bits_; }
  int bit(const story::Triple& t) const;  // -1 when outside the universe

  std::vector<float> encode(const story::WorldKG& kg) const;
  void encode_into(const story::WorldKG& kg, std::vector<float>& out) const;

 private:
  int bits_ = 0;
  std::unordered_map<std::string, int> index_;
};

}  // namespace guild::agent
