#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sentimidi/codec.hpp"

namespace sentimidi {

struct ParsedMidi {
    MidiPiece piece;
    // Non-fatal oddities (e.g. note-ons closed at track end).
    std::vector<std::string> warnings;
};

// Standard MIDI File formats 0 and 1. All tracks are merged into one stream,
// note pairs are resolved, onsets snap to the nearest sixteenth step and
// durations to 32nd-note units under the file's tick resolution.
// Throws DataError (with the byte offset) on malformed input.
ParsedMidi parse_smf(std::span<const uint8_t> bytes);

// Format 0, 480 ticks per quarter, single track with tempo meta-events.
// Overlapping notes on the same pitch are truncated at the next onset so the
// rendered file has no hung notes.
std::vector<uint8_t> write_smf(const MidiPiece& piece);

ParsedMidi read_midi_file(const std::string& path);
void write_midi_file(const std::string& path, const MidiPiece& piece);

}  // namespace sentimidi
