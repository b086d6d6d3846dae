"""Prompt templates and rendering.

Placeholders are single-brace {name} tokens (lowercase/underscore/digits
only), substituted verbatim with no escaping. The RAG response template takes
a pre-built {documents} block; build_document_blocks assembles it from
passages.
"""
from __future__ import annotations

import re

from .corpus import Passage

_PLACEHOLDER = re.compile(r"\{([a-z][a-z0-9_]*)\}")


class PromptError(Exception):
    pass


STATEMENT_EXTRACTION = """\
Please breakdown the given text into independent facts. Review the examples provided below to gain a clearer understanding of the task requirements and the expected output format.

Input: He made his acting debut in the film The Moon is the Sun's Dream (1992), and continued to appear in small and supporting roles throughout the 1990s.
Output: ["He made his acting debut in the film.", "He made his acting debut in The Moon is the Sun's Dream.", "The Moon is the Sun's Dream is a film.", "The Moon is the Sun's Dream was released in 1992.", "After his acting debut, he appeared in small and supporting roles.", "After his acting debut, he appeared in small and supporting roles throughout the 1990s."]

Input: Possible causes for right lower abdominal pain in a young female are Appendicitis, Inflammatory bowel disease, Diverticulitis, Kidney stone, urinary tract infection, Ovarian cyst or torsion, Ectopic pregnancy, Pelvic inflammatory disease, endometriosis.
Output: ["Possible cause for right lower abdominal pain in a young female: Appendicitis.", "Possible cause for right lower abdominal pain in a young female: Inflammatory bowel disease.", "Possible cause for right lower abdominal pain in a young female: Diverticulitis.", "Possible cause for right lower abdominal pain in a young female: Kidney stone.", "Possible cause for right lower abdominal pain in a young female: urinary tract infection.", "Possible cause for right lower abdominal pain in a young female: Ovarian cyst or torsion.", "Possible cause for right lower abdominal pain in a young female: Ectopic pregnancy.", "Possible cause for right lower abdominal pain in a young female: Pelvic inflammatory disease.", "Possible cause for right lower abdominal pain in a young female: endometriosis."]

Input: Hep A IgM refers to a specific type of antibody called Immunoglobulin M (IgM) against the virus hepatitis A. When infected with hepatitis A, these antibodies are detectable at symptom onset and remain detectable for approximately three to six months. These antibodies might also be detectable in the first month after hepatitis A vaccination. A negative or non-reactive result means no IgM antibodies against hepatitis A found in your serum, meaning the absence of an acute or recent hepatitis A virus infection.
Output: ["Hep A IgM refers to a specific type of antibody called Immunoglobulin M (IgM) against the virus hepatitis A.", "When infected with hepatitis A, these antibodies are detectable at the time of symptom onset.", "When infected with hepatitis A, these antibodies remain detectable for approximately three to six months after infection.", "These antibodies might also be detectable in the first month after hepatitis A vaccination.", "The absence of IgM antibodies against hepatitis A in your serum indicates the absence of an acute or recent hepatitis A virus infection.", "A negative or non-reactive result means that there were no IgM antibodies against hepatitis A found in your serum."]

# YOUR TASK

Input: {input}

Output: """

MUST_HAVE = """\
Please categorize the provided statements as either "must-have" or "nice-to-have".

*Must-have*: essential independent facts required to provide a complete answer to the given query.

*Nice-to-have*: supplementary or additional information that is useful but not essential.

Review the examples provided below to gain a clearer understanding of the task requirements and the expected output format.

Query: I am a 33 years old female with right lower abdominal pain , what could it be?
Answer: Possible causes for right lower abdominal pain in a young female are Appendicitis, Inflammatory bowel disease, Diverticulitis, Kidney stone, urinary tract infection, Ovarian cyst or torsion, Ectopic pregnancy, Pelvic inflammatory disease, endometriosis.
Statements: ["Possible cause for right lower abdominal pain in a young female: Appendicitis.", "Possible cause for right lower abdominal pain in a young female: Inflammatory bowel disease.", "Possible cause for right lower abdominal pain in a young female: Diverticulitis.", "Possible cause for right lower abdominal pain in a young female: Kidney stone.", "Possible cause for right lower abdominal pain in a young female: urinary tract infection.", "Possible cause for right lower abdominal pain in a young female: Ovarian cyst or torsion.", "Possible cause for right lower abdominal pain in a young female: Ectopic pregnancy.", "Possible cause for right lower abdominal pain in a young female: Pelvic inflammatory disease.", "Possible cause for right lower abdominal pain in a young female: endometriosis."]
Output: ["Must-have", "Must-have", "Must-have", "Must-have", "Must-have", "Must-have", "Must-have", "Must-have", "Must-have"]

Query: So what does the non reactive mean for the hep a igm
Answer: Hep A IgM refers to a specific type of antibody called Immunoglobulin M (IgM) against the virus hepatitis A. When infected with hepatitis A, these antibodies are detectable at symptom onset and remain detectable for approximately three to six months. These antibodies might also be detectable in the first month after hepatitis A vaccination. A negative or non-reactive result means no IgM antibodies against hepatitis A found in your serum, meaning the absence of an acute or recent hepatitis A virus infection.
Statements: ["Hep A IgM refers to a specific type of antibody called Immunoglobulin M (IgM) against the virus hepatitis A.", "When infected with hepatitis A, these antibodies are detectable at the time of symptom onset.", "When infected with hepatitis A, these antibodies remain detectable for approximately three to six months after infection.", "These antibodies might also be detectable in the first month after hepatitis A vaccination.", "The absence of IgM antibodies against hepatitis A in your serum indicates the absence of an acute or recent hepatitis A virus infection.", "A negative or non-reactive result means that there were no IgM antibodies against hepatitis A found in your serum."]
Output: ["Must-have", "Nice-to-have", "Nice-to-have", "Nice-to-have", "Must-have", "Must-have"]

# YOUR TASK

Respond only with a list containing either 'Must-have' or 'Nice-to-have' for each statement. No other responses are required.

Query: {query}

Answer: {answer}

Statements: {statements}

Output: """

_CITATION_INSTRUCTIONS = """\
Additionally, distinguish between statements within your response that require authoritative references and those that do not. Here, a "statement" refers to an atomic or foundational piece of information, which may not necessarily form a complete sentence. For statements requiring references, include citations immediately after the respective statements, with reference numbers enclosed in square brackets (e.g., [1][2][3]). Citations may also be placed within the sentence, rather than just at the end, when appropriate."""

_REFERENCE_LIST_INSTRUCTIONS = """\
At the end of your response, provide a consolidated list of references, formatted according to AMA guidelines. Label the section as "### References," and number the references sequentially (1, 2, 3, etc.), with each reference on a separate line. Every reference listed MUST be appropriately cited within the response using square brackets. Please double-check thoroughly to ensure this requirement is met without exception."""

RESPONSE_NONRAG = (
    "{task_instruction}\n\n"
    + _CITATION_INSTRUCTIONS
    + " "
    + _REFERENCE_LIST_INSTRUCTIONS
    + "\n\n### Input Query\n\n{query}"
)

RESPONSE_RAG = (
    "{task_instruction}\n\n"
    + _CITATION_INSTRUCTIONS
    + "\n\nThe provided document snippets are retrieved through a search engine and may be"
    " used as references to support your response. External references not included in the"
    " provided materials may also be incorporated. "
    + _REFERENCE_LIST_INSTRUCTIONS
    + "\n\n{documents}\n\n### Input Query\n\n{query}"
)

# task_instruction values for the two query families
PATIENT_QUERY_INSTRUCTION = (
    "Respond to the provided clinical inquiry. Your response must be accurate, clear, and"
    " include all essential information while omitting extraneous details."
)
MCQ_INSTRUCTION = (
    "Answer to the provided multiple-choice question about medical knowledge in a"
    " step-by-step fashion. Output your explanation and single option from the given"
    " options as the final answer."
)

DISTINCTIVE_FILTER = """\
You are given a single sentence. Your task is to decide whether this sentence is distinctive or non-distinctive.

A sentence is Distinctive only if:

It does not simply restate or paraphrase the question stem, and

It introduces either:

(a) clinical reasoning or inference (e.g., "this pattern suggests a mechanical cause", "these findings are consistent with TSC"), or

(b) definitions or factual information that go beyond what is stated in the question, or

(c) a final judgment or answer sentence (e.g., "the most accurate test is ~", "the answer is ~")

A sentence is Non-Distinctive if it falls into any of the following:

It restates or rewords content already found in the question

It presents a raw observation or finding from the question (e.g., age, vitals, exam result)

It provides a definition or fact that is already included or implied in the question

It is procedural, meta, or instructional (e.g., "Let's analyze..." or "We need to consider...")

# Question

{question}

# Target sentence (Do not output anything other than "Distinctive" or "Non-distinctive".)

{sentence}
"""

CITATION_ALIGNMENT = """\
You are given a model-generated response that includes statements with inline citations (e.g., [1], [2], etc.), along with a list of references corresponding to those citations.

Your task is to identify the alignment between each statement and the reference(s) it is associated with, based solely on the position of the citation markers in the response.

Instructions:

1. For each statement in the response, determine whether it is linked to one or more references by locating citation markers (e.g., [1]) near or within the statement.

2. For each linked reference, assign it to the corresponding statement.

3. Do not assess the factual accuracy or content of the reference. Only use the citation markers and their position in the response to make the alignment.

4. Consider a "statement" to be a single sentence or a semantically independent clause.

### Input:

- **Model Response**:
{model_response}

- **Statements**:
{model_statements}

- **References**:
{references}

### Output format:
Your output should be organized in JSON, without any other responses, using the following format:

{
  "#1": {
    "statement": "<copy of the statement>",
    "refs": [1, 3]
  },
  "#2": {
    "statement": "...",
    "refs": [...]
  }
}

### Output:
"""

EVIDENCE_FILTER = """\
Given a query and a text passage, determine whether the passage contains supporting evidence for the query. Supporting evidence means that the passage provides clear, relevant, and factual information that directly backs or justifies the answer to the query.

Respond with one of the following labels:

"Yes" if the passage contains supporting evidence for the query.

"No" if the passage does not contain supporting evidence.

You should respond with only the label (Yes or No) without any additional explanation.

Question: {question}

Passage: {passage}
"""

RATIONALE_REFORMULATION = """\
Respond to the following clinical decision-making task using the provided patient information, in a step-by-step fashion. Output your explanation and single option from the given options as the final answer.

{question}
"""

TEMPLATES: dict[str, str] = {
    "statement_extraction": STATEMENT_EXTRACTION,
    "must_have": MUST_HAVE,
    "response_nonrag": RESPONSE_NONRAG,
    "response_rag": RESPONSE_RAG,
    "distinctive_filter": DISTINCTIVE_FILTER,
    "citation_alignment": CITATION_ALIGNMENT,
    "evidence_filter": EVIDENCE_FILTER,
    "rationale_reformulation": RATIONALE_REFORMULATION,
}


def placeholders(kind: str) -> set[str]:
    if kind not in TEMPLATES:
        raise PromptError(f"unknown template kind {kind!r}")
    return set(_PLACEHOLDER.findall(TEMPLATES[kind]))


def render_prompt(kind: str, bindings: dict[str, str]) -> str:
    """Substitute placeholders verbatim; every placeholder must be bound."""
    template = TEMPLATES.get(kind)
    if template is None:
        raise PromptError(f"unknown template kind {kind!r}")
    needed = placeholders(kind)
    missing = needed - bindings.keys()
    if missing:
        raise PromptError(f"missing bindings for {kind}: {sorted(missing)}")
    return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), template)


def build_document_blocks(passages: list[Passage]) -> str:
    """Assemble the retrieved-snippet blocks for the RAG response prompt."""
    blocks = []
    for p in passages:
        meta = "; ".join(f"{k}: {v}" for k, v in sorted(p.metadata.items()))
        meta = meta or f"passage_id: {p.passage_id}"
        blocks.append(f"- Document -\n\n{p.text}\n\nMetadata: {meta}")
    return "\n\n".join(blocks)
