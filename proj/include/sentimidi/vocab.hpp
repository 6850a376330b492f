#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace sentimidi {

inline constexpr int kNumPitches = 128;
inline constexpr int kVelocityBin = 4;
inline constexpr int kVelocityMin = 4;
inline constexpr int kVelocityMax = 128;
inline constexpr int kTempoBin = 4;
inline constexpr int kTempoMin = 24;
inline constexpr int kTempoMax = 160;

// Duration base types, longest first. Lengths are in 32nd-note units.
enum class DurationType : int {
    Breve = 0,
    Whole,
    Half,
    Quarter,
    Eighth,
    Sixteenth,
    ThirtySecond,
};

inline constexpr int kNumDurationTypes = 7;
inline constexpr int kMaxDots = 3;

const char* duration_type_name(DurationType t);
double duration_base_length32(DurationType t);

struct Duration {
    DurationType type = DurationType::Quarter;
    int dots = 0;

    // base * (2 - 2^-dots), in 32nd-note units.
    double length32() const;
    std::string word() const;
    bool operator==(const Duration&) const = default;
};

enum class WordKind : int {
    Note,      // n_[0..127]
    Duration,  // d_[type]_[dots]
    Velocity,  // v_[4..128 step 4]
    Tempo,     // t_[24..160 step 4]
    Step,      // "."
    End,       // "\n"
};

// The fixed 225-word token alphabet. Canonical order: pitches ascending,
// durations type-major with dots 0..3, velocities ascending, tempi ascending,
// ".", "\n". Immutable after construction; concurrent reads are safe.
class Vocab {
public:
    Vocab();

    int size() const { return static_cast<int>(words_.size()); }
    const std::string& word(int id) const;
    const std::vector<std::string>& words() const { return words_; }

    // Accepts the dotless duration spelling ("d_eighth") as dots = 0.
    // Throws DataError on unknown words.
    int id(const std::string& word) const;
    bool contains(const std::string& word) const;

    WordKind kind(int id) const { return kinds_[static_cast<size_t>(id)]; }
    // Pitch, binned velocity, or binned tempo carried by the word; duration
    // words report their length in 32nd units via duration(id).
    int value(int id) const { return values_[static_cast<size_t>(id)]; }
    Duration duration(int id) const;

    int note_id(int pitch) const;
    int duration_id(Duration d) const;
    int velocity_id(int binned) const;
    int tempo_id(int binned) const;
    int step_id() const { return step_id_; }
    int end_id() const { return end_id_; }

    uint64_t hash() const { return hash_; }

private:
    std::vector<std::string> words_;
    std::vector<WordKind> kinds_;
    std::vector<int> values_;
    std::unordered_map<std::string, int> index_;
    int step_id_ = 0;
    int end_id_ = 0;
    uint64_t hash_ = 0;
};

// Shared canonical instance.
const Vocab& music_vocab();

}  // namespace sentimidi
