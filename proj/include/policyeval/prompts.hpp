#pragma once

#include "policyeval/corpus.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace policyeval {

// In-context moderation policy. Shipped as text assets so a different
// policy can be swapped in without code changes.
struct PolicyText {
    std::string definition_only; // core definition sentence
    std::string full_policy;     // definition + explanatory note + 11 example bullets

    // Reads <dir>/ihra_definition.txt and <dir>/ihra_full_policy.txt and
    // validates that the definition is contained in the full policy and
    // that all 11 example bullets are present.
    static PolicyText load(const std::filesystem::path& dir);

    std::vector<std::string> example_bullets() const;
};

enum class PromptKind { zs_as, zs_alpha, zs_beta, zs_cot, guided_cot, ablation };

struct PromptVariantId {
    PromptKind kind = PromptKind::zs_as;
    std::optional<int> excluded_thought; // 1..5, required iff kind == ablation

    // CLI spelling: zs-as | zs-alpha | zs-beta | zs-cot | guided-cot | ablation:a1..a5
    static PromptVariantId from_string(const std::string& s);
    std::string to_string() const;

    bool operator==(const PromptVariantId&) const = default;
};

struct RenderedPrompt {
    std::optional<std::string> system_message; // absent for zs_as
    std::string user_message;
    PromptVariantId variant;

    std::size_t total_chars() const {
        return user_message.size() + (system_message ? system_message->size() : 0);
    }
};

// The five analysis steps of the guided chain-of-thought prompt, unnumbered.
const std::vector<std::string>& guided_thoughts();

// Renders the named variant with {{post}} substituted. Deterministic:
// identical inputs give byte-identical output. Ablation variants drop one
// thought and renumber the remainder 1..4.
RenderedPrompt render(const PromptVariantId& variant, const Post& post,
                      const PolicyText& policy);

// The five ablation variants, each excluding one distinct thought.
std::vector<PromptVariantId> list_ablation_suite();

} // namespace policyeval
