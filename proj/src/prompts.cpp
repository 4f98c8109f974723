#include "policyeval/prompts.hpp"

#include "policyeval/errors.hpp"
#include "policyeval/util.hpp"

#include <sstream>

namespace policyeval {

namespace {

constexpr const char* kOutputDirective =
    "- First line must give a summary of your classified decision \"Summary:\"\n"
    "- Second line must give \"Antisemitic:\" (Yes|No)";

std::string classify_header(bool cites_policy, const std::string& post_text) {
    std::string head = cites_policy
                           ? "Classify the following Twitter post as antisemitic based on "
                             "IHRA's definitions:"
                           : "Classify the following Twitter post as antisemitic:";
    return head + "\n\n" + post_text + "\n\n";
}

} // namespace

PolicyText PolicyText::load(const std::filesystem::path& dir) {
    PolicyText policy;
    policy.definition_only = util::trim(util::read_file(dir / "ihra_definition.txt"));
    policy.full_policy = util::trim(util::read_file(dir / "ihra_full_policy.txt"));
    if (policy.full_policy.find(policy.definition_only) == std::string::npos) {
        throw ConfigError("policy assets inconsistent: full policy does not contain the "
                          "core definition");
    }
    if (policy.example_bullets().size() != 11) {
        throw ConfigError("full policy must list exactly 11 contemporary-example bullets, got " +
                          std::to_string(policy.example_bullets().size()));
    }
    return policy;
}

std::vector<std::string> PolicyText::example_bullets() const {
    std::vector<std::string> bullets;
    for (const auto& line : util::split_lines(full_policy)) {
        std::string t = util::trim(line);
        if (t.rfind("* ", 0) == 0) bullets.push_back(t.substr(2));
    }
    return bullets;
}

PromptVariantId PromptVariantId::from_string(const std::string& s) {
    const std::string v = util::to_lower(util::trim(s));
    if (v == "zs-as") return {PromptKind::zs_as, std::nullopt};
    if (v == "zs-alpha") return {PromptKind::zs_alpha, std::nullopt};
    if (v == "zs-beta") return {PromptKind::zs_beta, std::nullopt};
    if (v == "zs-cot") return {PromptKind::zs_cot, std::nullopt};
    if (v == "guided-cot") return {PromptKind::guided_cot, std::nullopt};
    if (v.rfind("ablation:a", 0) == 0 && v.size() == 11 && v[10] >= '1' && v[10] <= '5') {
        return {PromptKind::ablation, v[10] - '0'};
    }
    throw ConfigError("unknown prompt variant: \"" + s + "\"");
}

std::string PromptVariantId::to_string() const {
    switch (kind) {
    case PromptKind::zs_as: return "zs-as";
    case PromptKind::zs_alpha: return "zs-alpha";
    case PromptKind::zs_beta: return "zs-beta";
    case PromptKind::zs_cot: return "zs-cot";
    case PromptKind::guided_cot: return "guided-cot";
    case PromptKind::ablation:
        return "ablation:a" + std::to_string(excluded_thought.value_or(0));
    }
    return "?";
}

const std::vector<std::string>& guided_thoughts() {
    static const std::vector<std::string> thoughts = {
        "Break the post into chunks and explain what is being conveyed",
        "Identify whether OP's post is sarcasm, criticism, quoted statements, news, coded "
        "language, ambiguous phrasing, or reporting etc.?",
        "Check if OP is calling out to promote antisemitism or using statements/narrative to "
        "spread awareness about antisemitism",
        "Assess whether the post potentially aligns with the IHRA definition of antisemitism "
        "and its contemporary examples",
        "Based on your analysis, decide whether OP's stance is favorable to the Jews community "
        "or not?",
    };
    return thoughts;
}

RenderedPrompt render(const PromptVariantId& variant, const Post& post,
                      const PolicyText& policy) {
    if (util::trim(post.text).empty()) throw ConfigError("cannot render an empty post");
    if (variant.kind == PromptKind::ablation) {
        if (!variant.excluded_thought || *variant.excluded_thought < 1 ||
            *variant.excluded_thought > 5) {
            throw ConfigError("ablation variant requires excluded_thought in 1..5");
        }
    } else if (variant.excluded_thought) {
        throw ConfigError("excluded_thought is only valid for ablation variants");
    }

    RenderedPrompt out;
    out.variant = variant;

    switch (variant.kind) {
    case PromptKind::zs_as:
        out.user_message = classify_header(false, post.text) +
                           "## At the very end of your response, add following:\n" +
                           kOutputDirective;
        break;
    case PromptKind::zs_alpha:
        out.system_message = "IHRA Definition: \"" + policy.definition_only + "\"";
        out.user_message = classify_header(true, post.text) +
                           "## At the very end of your response, add following:\n" +
                           kOutputDirective;
        break;
    case PromptKind::zs_beta:
        out.system_message = policy.full_policy;
        out.user_message = classify_header(true, post.text) +
                           "## At the very end of your response, add following:\n" +
                           kOutputDirective;
        break;
    case PromptKind::zs_cot:
        out.system_message = policy.full_policy;
        out.user_message =
            classify_header(true, post.text) +
            "## Let's think step by step. And at the very end of your response, add "
            "following:\n" +
            kOutputDirective;
        break;
    case PromptKind::guided_cot:
    case PromptKind::ablation: {
        out.system_message = policy.full_policy;
        std::ostringstream user;
        user << classify_header(true, post.text);
        user << "## Let's analyze and think step by step:\n";
        int number = 1;
        for (size_t i = 0; i < guided_thoughts().size(); ++i) {
            if (variant.kind == PromptKind::ablation &&
                static_cast<int>(i) + 1 == *variant.excluded_thought) {
                continue;
            }
            user << number++ << ". " << guided_thoughts()[i] << '\n';
        }
        user << "\n## And at the very end of your response, add following:\n";
        user << kOutputDirective;
        out.user_message = user.str();
        break;
    }
    }
    return out;
}

std::vector<PromptVariantId> list_ablation_suite() {
    std::vector<PromptVariantId> suite;
    for (int t = 1; t <= 5; ++t) suite.push_back({PromptKind::ablation, t});
    return suite;
}

} // namespace policyeval
