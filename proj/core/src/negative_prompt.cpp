// Copyright (C) 2025 TRAP Authors
// SPDX-License-Identifier: Apache-2.0

#include <nlohmann/json.hpp>

#include <cctype>
#include <set>

#include "trap/error.hpp"
#include "trap/pipeline.hpp"
#include "trap/util.hpp"

namespace trap {

namespace {

const std::set<std::string>& article_words() {
    static const std::set<std::string> kArticles = {"a", "an", "the", "some", "two", "three", "several"};
    return kArticles;
}

// Qualifiers skipped on the way to the head noun: colors plus common
// size / material / quality adjectives seen in caption data.
const std::set<std::string>& qualifier_words() {
    static const std::set<std::string> kQualifiers = {
        "red",    "green", "blue",   "yellow",  "black", "white",  "brown",  "orange", "purple", "pink",
        "gray",   "grey",  "golden", "silver",  "big",   "small",  "large",  "little", "tiny",   "huge",
        "old",    "new",   "young",  "fresh",   "shiny", "bright", "dark",   "tasty",  "wooden", "metal",
        "plastic", "glass", "rustic", "vintage", "tall",  "short",  "narrow", "wide",   "round",  "striped"};
    return kQualifiers;
}

std::vector<std::string> tokenize_words(const std::string& text) {
    std::vector<std::string> words;
    std::string word;
    for (char c : to_lower(text)) {
        if (std::isalpha(static_cast<unsigned char>(c))) {
            word.push_back(c);
        } else if (!word.empty()) {
            words.push_back(word);
            word.clear();
        }
    }
    if (!word.empty()) words.push_back(word);
    return words;
}

}  // namespace

std::string extract_subject(const std::string& caption) {
    if (caption.empty()) throw Error("extract_subject: empty caption");
    const auto words = tokenize_words(caption);
    bool past_articles = false;
    for (const auto& w : words) {
        if (!past_articles && article_words().count(w)) continue;
        past_articles = true;
        if (qualifier_words().count(w)) continue;
        return w;
    }
    throw Error("extract_subject: no subject found in caption '" + caption + "'");
}

std::string TemplateTextGenerator::generate(const std::string& prompt) {
    return "low quality, blurry, unappealing " + extract_subject(prompt);
}

std::string RemoteTextGenerator::generate(const std::string& prompt) {
    if (!options_.http.configured()) throw BackendUnavailableError("textgen: no endpoint configured");
    nlohmann::json req;
    req["prompt"] = prompt;
    const auto json = nlohmann::json::parse(http_post_json(options_.http, options_.path, req.dump()));
    if (!json.contains("text") || !json["text"].is_string()) throw AdapterError("textgen: response missing 'text'");
    const std::string text = json["text"].get<std::string>();
    if (text.empty()) throw AdapterError("textgen: empty response");
    return text;
}

std::string generate_negative_prompt(const std::string& caption, TextGenerator* textgen, bool* used_fallback) {
    if (caption.empty()) throw Error("generate_negative_prompt: empty caption");
    if (used_fallback) *used_fallback = false;
    if (textgen) {
        try {
            return textgen->generate("Write a short negative image-generation prompt that degrades: " + caption);
        } catch (const Error&) {
            if (used_fallback) *used_fallback = true;
        }
    }
    TemplateTextGenerator offline;
    return offline.generate(caption);
}

}  // namespace trap
