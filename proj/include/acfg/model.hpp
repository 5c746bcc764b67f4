// Copyright 2026 The acfg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <concepts>
#include <memory>
#include <string>
#include <type_traits>
#include <utility>

#include "acfg/types.hpp"

namespace acfg
{
/**
 * A masked-sequence predictor: maps a token sequence (which may contain
 * [MASK]) to one row of logits per position. Implementations must be
 * deterministic and return a len(seq) x vocab().size matrix of finite values.
 */
template <class M>
concept LogitModel = requires(M& model, const TokenSeq& seq) {
    { model.logits(seq) } -> std::same_as<LogitMatrix>;
    { model.vocab() } -> std::convertible_to<const Vocab&>;
};

/// Checks a backend's output against the shape/finiteness contract.
inline void check_logits(const LogitMatrix& logits, const TokenSeq& seq, const Vocab& vocab)
{
    if (logits.rows() != seq.size() || logits.cols() != vocab.size)
        throw InvalidInput("model returned " + std::to_string(logits.rows()) + "x" +
                           std::to_string(logits.cols()) + " logits, expected " + std::to_string(seq.size()) +
                           "x" + std::to_string(vocab.size));
    if (!logits.all_finite()) throw InvalidInput("model returned non-finite logits");
}

/**
 * Type-erased handle over any LogitModel, for code that picks a backend at
 * run time. Copies share the underlying model.
 */
class AnyModel
{
public:
    AnyModel() = default;

    template <LogitModel M>
        requires(!std::same_as<std::remove_cvref_t<M>, AnyModel>)
    explicit AnyModel(std::shared_ptr<M> model) : impl_(std::make_shared<Holder<M>>(std::move(model)))
    {
    }

    LogitMatrix logits(const TokenSeq& seq) const { return impl_->logits(seq); }
    const Vocab& vocab() const { return impl_->vocab(); }
    explicit operator bool() const { return impl_ != nullptr; }

private:
    struct Base
    {
        virtual ~Base() = default;
        virtual LogitMatrix logits(const TokenSeq& seq) = 0;
        virtual const Vocab& vocab() const = 0;
    };

    template <class M>
    struct Holder final : Base
    {
        explicit Holder(std::shared_ptr<M> m) : model(std::move(m)) {}
        LogitMatrix logits(const TokenSeq& seq) override { return model->logits(seq); }
        const Vocab& vocab() const override { return model->vocab(); }
        std::shared_ptr<M> model;
    };

    std::shared_ptr<Base> impl_;
};

}  // namespace acfg
