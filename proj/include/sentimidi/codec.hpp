#pragma once

#include <span>
#include <string>
#include <vector>

#include "sentimidi/vocab.hpp"

namespace sentimidi {

// Onsets are sixteenth-step indices, durations are 32nd-note units (dotted
// values can be fractional), velocity is the raw MIDI value.
struct Note {
    int onset = 0;
    int pitch = 0;
    int velocity = 64;
    double duration32 = 8.0;

    bool operator==(const Note&) const = default;
};

struct TempoChange {
    int onset = 0;
    double bpm = 120.0;

    bool operator==(const TempoChange&) const = default;
};

struct MidiPiece {
    std::vector<Note> notes;
    std::vector<TempoChange> tempo_changes;
    int end_step = 0;

    // Sorts notes by (onset, pitch, duration, velocity) and tempo changes by
    // onset with last-wins dedup, restoring the type invariants.
    void normalize();
    bool operator==(const MidiPiece&) const = default;
};

struct QuantizerConfig {
    int velocity_bin = kVelocityBin;
    int velocity_min = kVelocityMin;
    int velocity_max = kVelocityMax;
    int tempo_bin = kTempoBin;
    int tempo_min = kTempoMin;
    int tempo_max = kTempoMax;
};

// Nearest bin with half-up rounding, clamped to the bin range.
int quantize_velocity(int velocity, const QuantizerConfig& cfg = {});
int quantize_tempo(double bpm, const QuantizerConfig& cfg = {});

// Nearest representable (type, dots) length; ties prefer fewer dots, then the
// longer base type.
Duration quantize_duration(double length32);

// Token emission walks the sixteenth-step grid, emitting tempo / velocity /
// duration words only when the quantized running value changes, "." at each
// step end and "\n" at piece end. Returned ids include the trailing "\n".
std::vector<int> encode(const MidiPiece& piece, const Vocab& vocab,
                        const QuantizerConfig& cfg = {});

struct DecodeDefaults {
    int tempo = 120;
    int velocity = 64;
    Duration duration{DurationType::Quarter, 0};
};

// Inverse of encode up to quantization. Tokens that set state out of order
// are legal; notes seen before their state words use the defaults.
MidiPiece decode(std::span<const int> tokens, const Vocab& vocab,
                 const DecodeDefaults& defaults = {});

struct AugmentResult {
    MidiPiece piece;
    int dropped_notes = 0;
};

// Transposition shifts pitches (out-of-range notes dropped and counted);
// time stretch scales raw tempo values ahead of quantization.
AugmentResult augment(const MidiPiece& piece, double stretch, int transpose);

// The 5 x 9 stretch/transpose grid, identity included once.
std::vector<std::pair<double, int>> augmentation_grid();

// Token text: one piece per line, single-space separated, the "\n" word is
// the line terminator itself.
std::string tokens_to_line(std::span<const int> tokens, const Vocab& vocab);
std::vector<int> line_to_tokens(const std::string& line, const Vocab& vocab);

std::vector<std::string> read_token_lines(std::istream& in);
std::vector<std::string> read_token_file(const std::string& path);
void write_token_file(const std::string& path, const std::vector<std::string>& lines);

}  // namespace sentimidi
