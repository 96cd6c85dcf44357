#include "ptlm/text_data.hpp"

// The two reference domain grammars. They deliberately share only function
// words (articles, pronouns, auxiliaries) while their content vocabularies
// are disjoint, which is what makes the cross-domain perplexity gap and the
// content-word error metrics measurable at desk scale. Food and bill nouns
// come in singular/plural pairs one edit apart, so hypothesis generation can
// produce number-agreement errors a language model is able to catch.

namespace ptlm {

namespace {

const char* kFastfoodJson = R"GRAMMAR({
  "$root": [
    {"expansion": ["$order"], "weight": 5},
    {"expansion": ["$order", "$extra"], "weight": 2},
    {"expansion": ["$question"], "weight": 2}
  ],
  "$order": [
    {"expansion": ["i", "would", "like", "$items"], "weight": 3},
    {"expansion": ["i", "want", "$items"], "weight": 3},
    {"expansion": ["can", "i", "get", "$items"], "weight": 3},
    {"expansion": ["i", "will", "have", "$items"], "weight": 2},
    {"expansion": ["my", "order", "is", "$items"], "weight": 1}
  ],
  "$items": [
    {"expansion": ["$sg_np"], "weight": 4},
    {"expansion": ["$pl_np"], "weight": 3},
    {"expansion": ["$sg_np", "and", "$pl_np"], "weight": 1},
    {"expansion": ["$sg_np", "and", "$sg_np"], "weight": 1}
  ],
  "$sg_np": [
    {"expansion": ["a", "$food_sg"], "weight": 4},
    {"expansion": ["one", "$food_sg"], "weight": 1},
    {"expansion": ["a", "$size", "$drink"], "weight": 2},
    {"expansion": ["a", "$drink"], "weight": 2},
    {"expansion": ["a", "$food_sg", "with", "$topping"], "weight": 2},
    {"expansion": ["a", "$food_sg", "combo"], "weight": 1}
  ],
  "$pl_np": [
    {"expansion": ["two", "$food_pl"], "weight": 3},
    {"expansion": ["three", "$food_pl"], "weight": 2},
    {"expansion": ["two", "$food_pl", "with", "$topping"], "weight": 1},
    {"expansion": ["$food_pl"], "weight": 1}
  ],
  "$food_sg": [
    {"expansion": ["burger"], "weight": 4},
    {"expansion": ["taco"], "weight": 3},
    {"expansion": ["pizza"], "weight": 2},
    {"expansion": ["salad"], "weight": 2},
    {"expansion": ["wrap"], "weight": 2},
    {"expansion": ["sandwich"], "weight": 2},
    {"expansion": ["cookie"], "weight": 1}
  ],
  "$food_pl": [
    {"expansion": ["burgers"], "weight": 4},
    {"expansion": ["fries"], "weight": 4},
    {"expansion": ["tacos"], "weight": 3},
    {"expansion": ["nuggets"], "weight": 3},
    {"expansion": ["pizzas"], "weight": 2},
    {"expansion": ["salads"], "weight": 2},
    {"expansion": ["wraps"], "weight": 2},
    {"expansion": ["sandwiches"], "weight": 2},
    {"expansion": ["cookies"], "weight": 1}
  ],
  "$drink": [
    {"expansion": ["coke"], "weight": 4},
    {"expansion": ["soda"], "weight": 2},
    {"expansion": ["shake"], "weight": 2},
    {"expansion": ["lemonade"], "weight": 1}
  ],
  "$size": [
    {"expansion": ["large"], "weight": 3},
    {"expansion": ["medium"], "weight": 2},
    {"expansion": ["small"], "weight": 2}
  ],
  "$topping": [
    {"expansion": ["cheese"], "weight": 3},
    {"expansion": ["bacon"], "weight": 2},
    {"expansion": ["pickles"], "weight": 2},
    {"expansion": ["onions"], "weight": 2},
    {"expansion": ["ketchup"], "weight": 1},
    {"expansion": ["mustard"], "weight": 1}
  ],
  "$extra": [
    {"expansion": ["with", "extra", "$topping"], "weight": 2},
    {"expansion": ["and", "no", "$topping"], "weight": 2}
  ],
  "$question": [
    {"expansion": ["what", "is", "on", "the", "menu"], "weight": 2},
    {"expansion": ["how", "much", "is", "a", "$food_sg"], "weight": 2},
    {"expansion": ["do", "you", "have", "$food_pl"], "weight": 2}
  ]
})GRAMMAR";

const char* kBankingJson = R"GRAMMAR({
  "$root": [
    {"expansion": ["$balance_q"], "weight": 3},
    {"expansion": ["$action_stmt"], "weight": 4},
    {"expansion": ["$info_q"], "weight": 3}
  ],
  "$balance_q": [
    {"expansion": ["what", "is", "my", "$acct", "balance"], "weight": 3},
    {"expansion": ["show", "me", "my", "$acct", "balance"], "weight": 2},
    {"expansion": ["check", "my", "$acct", "balance"], "weight": 2}
  ],
  "$acct": [
    {"expansion": ["checking"], "weight": 3},
    {"expansion": ["savings"], "weight": 3},
    {"expansion": ["credit"], "weight": 2},
    {"expansion": ["debit"], "weight": 1}
  ],
  "$action_stmt": [
    {"expansion": ["i", "need", "to", "$verb", "$object"], "weight": 3},
    {"expansion": ["how", "do", "i", "$verb", "$object"], "weight": 2},
    {"expansion": ["can", "you", "$verb", "$object"], "weight": 2},
    {"expansion": ["$verb", "$object"], "weight": 2}
  ],
  "$verb": [
    {"expansion": ["transfer"], "weight": 3},
    {"expansion": ["send"], "weight": 2},
    {"expansion": ["pay"], "weight": 2},
    {"expansion": ["block"], "weight": 1},
    {"expansion": ["report"], "weight": 1},
    {"expansion": ["open"], "weight": 1},
    {"expansion": ["close"], "weight": 1}
  ],
  "$object": [
    {"expansion": ["money", "to", "my", "$acct", "account"], "weight": 3},
    {"expansion": ["funds", "to", "my", "$acct", "account"], "weight": 1},
    {"expansion": ["my", "$bill_sg"], "weight": 2},
    {"expansion": ["a", "payment"], "weight": 2},
    {"expansion": ["my", "card"], "weight": 2},
    {"expansion": ["my", "lost", "card"], "weight": 1}
  ],
  "$bill_sg": [
    {"expansion": ["bill"], "weight": 2},
    {"expansion": ["loan"], "weight": 2},
    {"expansion": ["mortgage"], "weight": 1},
    {"expansion": ["statement"], "weight": 1}
  ],
  "$info_q": [
    {"expansion": ["show", "me", "my", "recent", "$thing_pl"], "weight": 3},
    {"expansion": ["what", "are", "my", "monthly", "$thing_pl"], "weight": 2},
    {"expansion": ["when", "is", "my", "$bill_sg", "due"], "weight": 2},
    {"expansion": ["what", "is", "the", "interest", "rate"], "weight": 2},
    {"expansion": ["where", "is", "the", "nearest", "branch"], "weight": 1}
  ],
  "$thing_pl": [
    {"expansion": ["transactions"], "weight": 3},
    {"expansion": ["payments"], "weight": 2},
    {"expansion": ["statements"], "weight": 2},
    {"expansion": ["fees"], "weight": 2},
    {"expansion": ["charges"], "weight": 1},
    {"expansion": ["accounts"], "weight": 1},
    {"expansion": ["cards"], "weight": 1},
    {"expansion": ["loans"], "weight": 1},
    {"expansion": ["bills"], "weight": 1},
    {"expansion": ["rates"], "weight": 1}
  ]
})GRAMMAR";

}  // namespace

std::vector<std::string> builtin_grammar_names() {
    return {"fastfood-orders", "banking-queries"};
}

DomainGrammar builtin_grammar(const std::string& name) {
    if (name == "fastfood-orders") {
        static const DomainGrammar g = parse_grammar_json(kFastfoodJson, "fastfood-orders");
        return g;
    }
    if (name == "banking-queries") {
        static const DomainGrammar g = parse_grammar_json(kBankingJson, "banking-queries");
        return g;
    }
    throw InputError("no built-in grammar named " + name + " (have fastfood-orders, banking-queries)");
}

}  // namespace ptlm
