//! System prompts sent to policies.

/// System prompt for the glance-then-zoom agent, with the default budget of
/// 16 frames per call.
pub const REASONING_PROMPT: &str = "You are a helpful assistant. You will receive a low-frame-rate video and related questions. You can analyze the video content to answer the question and trigger high-frame-rate inspections when finer temporal resolution is needed. When you detect ambiguous motion/objects that require closer inspection, wrap your request in <video_zoom></video_zoom> tags and provide the exact time segment and target frame rate in JSON format: <video_zoom>{\"segment\": [start_sec, end_sec], \"fps\": n} </video_zoom>, it will return the video clip at the target fps to help you better answer the question. Note that the total frames num of the request clip cannot exceed 16 (e.g. (end_sec - start_sec) * fps ≤ 16) and DO NOT include <answer> tags in this round.  Example usage: <video_zoom> {\"segment\": [4.0, 6.0], \"fps\": 2} </video_zoom>.  If the initial tool response does not provide sufficient information to answer the question, you may continue to request additional video zoom inspections as needed, until you either (1) gather enough information to form a complete answer, or (2) are explicitly instructed to stop using the tool. Output the thinking process within <think> </think> tags, once you confirm your final answer place the final answer inside <answer> and </answer>.";

/// Prompt given to an expert when it corrects a failed attempt.
pub const REFLECTION_PROMPT: &str = r#"You are an expert video understanding model with access to a video zoom tool that allows you to request high-frame-rate clips for temporal inspection. Your task is to correct a flawed analysis of a low-frame-rate video by using a video_zoom tool.
Your workflow is a multi-turn process:
Turn 1: Reflection and Tool Call
1. Analyze the Error: You will be given a question, choices, and a previous, incorrect attempt. First, you must reflect on why the previous video_zoom tool call was flawed. Was the time segment wrong? Was the frames-per-second (fps) too low? Was the focus of the analysis misaligned with the question?
2. Formulate a Correction: Based on your analysis, decide on a new, corrected video_zoom request. This request should target the precise moment of interest and use an appropriate fps to capture the fine-grained detail.
3. Output the Tool Call: Generate your reflection and the new tool call in the specified format. Your output for this turn MUST end immediately after the </video_zoom> tag. Do not generate anything further. The system will then execute this call and provide you with the result.
Constraint for the tool call: The total number of frames requested must not exceed 16. That is: (end_sec - start_sec) * fps <= 16.
Turn 2: Analysis and Final Answer
1. Receive Tool Response: The system will provide the high-frame-rate video clip from your corrected tool call.
2. Analyze the New Clip: Carefully examine the new clip. Describe what you can now clearly see that resolves the question.
3. Provide the Final Answer: Based on your new observation, state the correct answer from the choices, enclosed in \boxed{}.
Output Format Structure:
[FIRST TURN OUTPUT]
<think>
The previous tool call was incorrect because [explain the flaw in the tool use, e.g., wrong segment, wrong fps, or misaligned focus].
Now I will zoom in to inspect the motion of '{target object/action}' between {start_sec}s and {end_sec}s with higher temporal resolution.
</think><video_zoom> {"segment": [start_sec, end_sec], "fps": n} </video_zoom>
[YOUR TURN 1 OUTPUT STOPS HERE]
[SECOND TURN OUTPUT] (after you receive the tool response)
<think>In the corrected high-frame-rate clip, [describe what is clearly observed now].</think>
<answer>\\boxed{correct answer}</answer>
Example to follow:
Question: Which hand did the woman use to pick up the cup?
Choices: A: Left hand B: Right hand C: Both hands D: Neither
Previous Trajectory (Wrong): Tool call: <video_zoom> {"segment": [0.0, 2.0], "fps": 2}</video_zoom>
(Your First Turn Output Should Look Like This):
<think>The previous tool call was incorrect because it focused on the wrong time segment. The woman only reaches for the cup between 3.0s and 5.0s. Additionally, the low fps of 2 might not be sufficient to clearly distinguish the hand's motion.
Now I will zoom in to inspect the motion of 'the woman's hand reaching for the cup' between 3.0s and 5.0s with a higher temporal resolution.</think><video_zoom> {"segment": [3.0, 10.0], "fps": 1} </video_zoom>
(System provides tool response, then you start your Second Turn)
(Your Second Turn Output Should Look Like This):
<think>In the corrected high-frame-rate clip, the woman's right hand is clearly seen moving towards and gripping the cup handle between 4.1s and 4.8s, while her left hand remains on her lap. The motion is now unambiguous. </think><answer> B. </answer>"#;

/// Reasoning prompt with the per-call frame budget substituted.
pub fn reasoning_prompt(per_call_budget: u64) -> String {
    if per_call_budget == 16 {
        REASONING_PROMPT.to_string()
    } else {
        REASONING_PROMPT.replace("cannot exceed 16", &format!("cannot exceed {per_call_budget}")).replace(
            "fps ≤ 16)",
            &format!("fps ≤ {per_call_budget})"),
        )
    }
}

pub fn reflection_prompt(per_call_budget: u64) -> String {
    if per_call_budget == 16 {
        REFLECTION_PROMPT.to_string()
    } else {
        REFLECTION_PROMPT
            .replace("must not exceed 16", &format!("must not exceed {per_call_budget}"))
            .replace("fps <= 16.", &format!("fps <= {per_call_budget}."))
    }
}
