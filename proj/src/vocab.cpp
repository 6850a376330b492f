#include "sentimidi/vocab.hpp"

#include <cmath>

#include "sentimidi/errors.hpp"
#include "sentimidi/hash.hpp"

namespace sentimidi {

const char* duration_type_name(DurationType t) {
    switch (t) {
        case DurationType::Breve: return "breve";
        case DurationType::Whole: return "whole";
        case DurationType::Half: return "half";
        case DurationType::Quarter: return "quarter";
        case DurationType::Eighth: return "eighth";
        case DurationType::Sixteenth: return "16th";
        case DurationType::ThirtySecond: return "32nd";
    }
    return "?";
}

double duration_base_length32(DurationType t) {
    // breve = 64 thirty-second notes, halving down to 32nd = 1.
    return std::ldexp(64.0, -static_cast<int>(t));
}

double Duration::length32() const {
    return duration_base_length32(type) * (2.0 - std::ldexp(1.0, -dots));
}

std::string Duration::word() const {
    return std::string("d_") + duration_type_name(type) + "_" + std::to_string(dots);
}

Vocab::Vocab() {
    words_.reserve(225);
    auto push = [&](std::string w, WordKind k, int value) {
        index_.emplace(w, static_cast<int>(words_.size()));
        words_.push_back(std::move(w));
        kinds_.push_back(k);
        values_.push_back(value);
    };

    for (int p = 0; p < kNumPitches; ++p)
        push("n_" + std::to_string(p), WordKind::Note, p);
    for (int t = 0; t < kNumDurationTypes; ++t)
        for (int dots = 0; dots <= kMaxDots; ++dots)
            push(Duration{static_cast<DurationType>(t), dots}.word(), WordKind::Duration,
                 t * (kMaxDots + 1) + dots);
    for (int v = kVelocityMin; v <= kVelocityMax; v += kVelocityBin)
        push("v_" + std::to_string(v), WordKind::Velocity, v);
    for (int t = kTempoMin; t <= kTempoMax; t += kTempoBin)
        push("t_" + std::to_string(t), WordKind::Tempo, t);
    step_id_ = static_cast<int>(words_.size());
    push(".", WordKind::Step, 0);
    end_id_ = static_cast<int>(words_.size());
    push("\n", WordKind::End, 0);

    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& w : words_) h = fnv1a64(w + "\n", h);
    hash_ = h;
}

const std::string& Vocab::word(int id) const {
    if (id < 0 || id >= size()) throw DataError("token id out of range: " + std::to_string(id));
    return words_[static_cast<size_t>(id)];
}

int Vocab::id(const std::string& word) const {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    // Dotless duration spelling normalizes to dots = 0.
    if (word.rfind("d_", 0) == 0) {
        auto dotted = index_.find(word + "_0");
        if (dotted != index_.end()) return dotted->second;
    }
    std::string shown = word == "\n" ? "\\n" : word;
    throw DataError("unknown word: '" + shown + "'");
}

bool Vocab::contains(const std::string& word) const {
    if (index_.count(word)) return true;
    return word.rfind("d_", 0) == 0 && index_.count(word + "_0");
}

Duration Vocab::duration(int id) const {
    if (kind(id) != WordKind::Duration)
        throw DataError("not a duration word: " + word(id));
    const int v = value(id);
    return Duration{static_cast<DurationType>(v / (kMaxDots + 1)), v % (kMaxDots + 1)};
}

int Vocab::note_id(int pitch) const {
    if (pitch < 0 || pitch >= kNumPitches)
        throw DataError("pitch out of range: " + std::to_string(pitch));
    return pitch;
}

int Vocab::duration_id(Duration d) const {
    return kNumPitches + static_cast<int>(d.type) * (kMaxDots + 1) + d.dots;
}

int Vocab::velocity_id(int binned) const {
    if (binned < kVelocityMin || binned > kVelocityMax || binned % kVelocityBin != 0)
        throw DataError("velocity not in bin set: " + std::to_string(binned));
    return kNumPitches + kNumDurationTypes * (kMaxDots + 1) + (binned - kVelocityMin) / kVelocityBin;
}

int Vocab::tempo_id(int binned) const {
    if (binned < kTempoMin || binned > kTempoMax || binned % kTempoBin != 0)
        throw DataError("tempo not in bin set: " + std::to_string(binned));
    return kNumPitches + kNumDurationTypes * (kMaxDots + 1) +
           (kVelocityMax - kVelocityMin) / kVelocityBin + 1 + (binned - kTempoMin) / kTempoBin;
}

const Vocab& music_vocab() {
    static const Vocab v;
    return v;
}

uint64_t parse_hex_u64(const std::string& s) {
    uint64_t v = 0;
    for (char c : s) {
        v <<= 4;
        if (c >= '0' && c <= '9') v |= static_cast<uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') v |= static_cast<uint64_t>(c - 'a' + 10);
        else if (c >= 'A' && c <= 'F') v |= static_cast<uint64_t>(c - 'A' + 10);
        else throw DataError("bad hex string: " + s);
    }
    return v;
}

}  // namespace sentimidi
