"""Prompt templates for the four LLM roles.

Templates are versioned string assets with UPPERCASE replacement slots
(``{SOLUTION}``, ``{PROGRESS_REPORT}``, ...). Slots are substituted with
plain string replacement, never ``str.format``, because several templates
legitimately contain literal braces (JSON schemas, boxed answers).
"""
from __future__ import annotations

TEMPLATE_VERSION = 1

PROGRESS_REPORT_TEMPLATE = """\
You are an advanced AI summarizer with expertise in extracting and condensing key insights from recent developments. Your goal is to create a concise progress report based on the provided information.

Read the task description and the chain of thoughts generated so far. Please ignore the <examples> section which is only for the demonstration of the task.
<progress>
{SOLUTION}
</progress>

And then complete the following template:

Current Attempts:
[Insert the list of previous attempts here]

Analysis Instructions:
1. Systematically review each attempted step
2. Identify patterns in the current solution attempts
3. Provide observations regarding:
   - Recurring strategies
   - Missed opportunities
   - Potential promising approaches
   - Any mathematical observations about the number combination

Output Format:
- Provide a structured analysis
- Include bullet points for key observations

Constraints:
- Use clear, logical reasoning
- Focus on mathematical problem-solving approaches
- Avoid random guessing
- Make the analysis short and to the point (around 6-7 sentences)
"""

META_PROPOSAL_TEMPLATE = """\
You are a Meta-reasoner, tasked with analyzing the reasoning process of another agent and providing guidance for its further steps. Your goal is to improve the efficiency and effectiveness of that agent's problem-solving approach.

Review the task description and the summary of the recent reasoning progress below:
{PROGRESS_REPORT}

Provide feedback in the following format:
- Reflection: What is the current strategy of the agent to solve the task? Has the agent made sufficient progress? Are there any mistakes or misconceptions in the intermediate steps? Is the agent taking unnecessary detours or repeating steps?
- Fact Check: Are the agent's statements accurate and relevant to the task? Are there any logical errors or incorrect assumptions?
- Thought: What are the key insights or strategies that the agent should focus on? Are there alternative methods or perspectives that could be beneficial?
- Action: The action to take

Make your response precise and focused without unnecessary details.
"""

COT_STEP_TEMPLATE = """\
You are an AI assistant tasked with generating steps to solve mathematical problems. Your role is to read a task description, consider the current step (if any), and generate the next logical step towards solving the problem. You will also receive feedback from a Meta-reasoner, which you should take into account when determining your next step.

Here is the task description:
<task_description>
{TASK_DESCRIPTION}
</task_description>

The process will work as follows:
1. You will be given the current step (if any) in the problem-solving process.
2. You will also receive feedback from the Meta-reasoner about the previous step.
3. Your job is to generate the next logical step towards solving the problem, taking into account the task description, the current step, and the Meta-reasoner's feedback.

To generate the next step:
1. Carefully analyze the task description, the current step (if any), and the Meta-reasoner's feedback.
2. If the Meta-reasoner suggests backtracking, consider how to modify or correct the previous step.
3. If the Meta-reasoner suggests continuing, think about the logical progression from the current step.
4. If the Meta-reasoner suggests changing strategy, brainstorm alternative approaches to the problem.
5. Formulate a clear, concise next step that moves towards solving the problem.

Your response should be a single, well-thought-out step that progresses the problem-solving process. Do not solve the entire problem at once; focus on generating just the next logical step.

Please provide your next step within <next_step> tags. Before giving your next step, explain your reasoning within <reasoning> tags. Explicitly state whether the problem is solved or not before providing the next step or final answer.
If you believe there has been enough progress to solve the problem completely, generate the final answer in the form of \\boxed{answer} at the end of your response. The answer should be a numerical value.

Your response should follow this structure:

<reasoning>
[Explain your thought process here, considering the task description, current step, and Meta-reasoner feedback (make sure to address any issues raised by the Meta-reasoner).
The reasoning should be clear, logical, and directly related to the problem-solving process.]
</reasoning>

<next_step>
[Provide the next logical step here]
</next_step>

[State whether the problem is solved or not]

[If the problem is solved] Return only the Final answer: \\boxed{numerical_value}

Remember to focus on generating just the next logical step, not solving the entire problem at once (unless you've reached the final solution). Your explanation and step should be clear, concise, and directly contribute to solving the mathematical problem at hand.

Here is the current step (if this is the first step, this will be empty):
<current_step>
{CURRENT_STEP}
</current_step>

And here is the feedback from the Meta-reasoner (if this is the first step, this will be empty):
<meta_reasoner_feedback>
{META_REASONER_FEEDBACK}
</meta_reasoner_feedback>
"""

EVALUATION_TEMPLATE = """\
You are an impartial evaluator tasked with assessing the progress of a reasoning process toward solving a given task objective. Your evaluation must be based strictly on the provided reward function components. Do not favor any particular output or introduce bias - evaluate objectively.

# Inputs:

Task Objective (G_t): {TASK_OBJECTIVE}

Current Progress (P_t): {CURRENT_PROGRESS}

Number of Reasoning Steps (N_s): {N_STEPS}

Weights and Coefficients:
  - w1 (weight for correctness): {W1}
  - w2 (weight for adherence): {W2}
  - alpha (cost coefficient for resource usage): {ALPHA}
  - beta (trade-off balance): {BETA}

# Evaluation Criteria:
1. Correctness (C_c): Score on a scale of 0.0 to 1.0 how accurate and logically sound the current progress is toward fully solving the task objective. Consider factual accuracy, logical consistency, and advancement toward a complete solution. 0.0 means no progress or entirely incorrect; 1.0 means perfectly correct and on track for completion.
2. Adherence (C_a): Score on a scale of 0.0 to 1.0 how well the current progress follows the task objective's constraints, requirements, and guidelines (e.g., format, scope, ethical considerations). 0.0 means complete disregard; 1.0 means full compliance.
3. Solution Progress (S_p): Compute as S_p = (w1 * C_c) + (w2 * C_a).
4. Resource Usage (R_u): Compute as R_u = -alpha * N_s. This penalizes excessive steps for efficiency.
5. Total Reward (R): Compute as R = (beta * S_p) + ((1 - beta) * R_u).

# Output Format:
Respond only in the following strict JSON structure. Do not include any additional text, explanations, or commentary outside this JSON.

{
  "C_c": <float, your score for correctness>,
  "C_a": <float, your score for adherence>,
  "S_p": <float, computed solution progress>,
  "R_u": <float, computed resource usage>,
  "R": <float, total reward>,
  "brief_rationale": "<A concise 1-2 sentence explanation for C_c and C_a scores only.>"
}
"""

DIRECT_SELECTION_TEMPLATE = """\
You are a strategy selector for a step-by-step problem solver. Based on the
progress summary below, choose exactly one of the numbered strategies for the
next step.

Progress summary:
{PROGRESS_REPORT}

Strategies:
{STRATEGY_LIST}

Respond with only the number of the chosen strategy.
"""


def fill(template: str, **slots: str) -> str:
    """Substitute ``{NAME}`` slots; raises if a requested slot is absent."""
    out = template
    for name, value in slots.items():
        token = "{" + name + "}"
        if token not in out:
            raise KeyError(f"template has no slot {token}")
        out = out.replace(token, str(value))
    return out


def progress_report_prompt(solution: str) -> str:
    return fill(PROGRESS_REPORT_TEMPLATE, SOLUTION=solution)


def meta_proposal_prompt(progress_report: str) -> str:
    return fill(META_PROPOSAL_TEMPLATE, PROGRESS_REPORT=progress_report)


def cot_step_prompt(task_description: str, current_step: str, meta_feedback: str) -> str:
    return fill(
        COT_STEP_TEMPLATE,
        TASK_DESCRIPTION=task_description,
        CURRENT_STEP=current_step,
        META_REASONER_FEEDBACK=meta_feedback,
    )


def evaluation_prompt(
    objective: str,
    progress: str,
    n_steps: int,
    w1: float,
    w2: float,
    alpha: float,
    beta: float,
) -> str:
    return fill(
        EVALUATION_TEMPLATE,
        TASK_OBJECTIVE=objective,
        CURRENT_PROGRESS=progress,
        N_STEPS=str(n_steps),
        W1=repr(w1),
        W2=repr(w2),
        ALPHA=repr(alpha),
        BETA=repr(beta),
    )


def direct_selection_prompt(progress_report: str, strategies: list[str]) -> str:
    listing = "\n".join(f"{i}. {text}" for i, text in enumerate(strategies))
    return fill(DIRECT_SELECTION_TEMPLATE, PROGRESS_REPORT=progress_report, STRATEGY_LIST=listing)
