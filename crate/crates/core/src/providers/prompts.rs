//! Prompt templates for every model role.
//!
//! The functionality-extraction and instruction-synthesis prompts are fixed
//! texts; the mock backends recognize a request by its system prompt, so these
//! constants double as request-family tags.

pub const FUNCTIONALITY_SYSTEM: &str = r#"You are a GUI screenshot analysis expert. You will be provided with:
1. A screenshot of a UI screen (Screen Before) with the action area marked in red
2. The action type performed
3. The resulting screenshot after the action (Screen After)
4. The name of the Android app

Your task is to analyze the elements on the **second screenshot (Screen After)** ONLY. The first screenshot is provided only as context to help you understand the app's state.

Each element should be output as a dictionary:

{
    "type": "functionality" or "data",
    "label": "A short phrase describing its identifier on this screen",
    "description": "A few sentences describing this element's functionality"
}

The description should be **comprehensive and detailed**:
- Include the hierarchical location within the app (e.g., which menu, which settings page, which sub-section)
- Explain what this element does **at the phone/device level**, so that someone reading this description can fully understand the element's role and functionality without seeing the screenshot.

Here are examples showing bad descriptions and their improved versions:

Example 1:
- Bad: "A WiFi toggle that enables or disables WiFi connectivity."
- Reason: Too vague; does not specify location or device-level changes.
- Good: "This toggle under System Settings > Network & Internet > Wi-Fi enables or disables Wi-Fi on the device, allowing the phone to scan for available wireless networks and connect/disconnect from them."

Example 2:
- Bad: "A Reminder option enables users to set a reminder."
- Reason: Too vague; does not explain what scenario it is used for.
- Good: "In the calendar app's event creation/edit screen, this reminder option schedules a notification before the event starts (e.g., 10 minutes in advance), helping the user receive an alert at the chosen lead time."

Output a JSON list only. No markdown, no comments, no extra text. Start with [ and end with ]."#;

/// User text of the functionality-extraction prompt. Images precede it.
pub fn functionality_user(app_name: &str, action_type: &str) -> String {
    format!(
        "App: {app_name}\nAction: {action_type}\n\nThe first image is Screen Before (with action area marked in red). \
The second image is Screen After. Please analyze the elements on the second image."
    )
}

/// User text when the screen has no recorded predecessor (only one image).
pub fn functionality_user_without_context(app_name: &str) -> String {
    format!(
        "App: {app_name}\nAction: none\n\nNo preceding screen is available; the only image is Screen After. \
Please analyze the elements on this image."
    )
}

pub const SYNTHESIS_SYSTEM: &str = r#"You are a GUI explorer. Your goal is to explore a GUI environment and synthesize high-quality, high-difficulty, executable, high-level, multi-step GUI tasks/instructions.

You have already completed the exploration work. You have collected many screenshots from the current GUI environment, the transitions between them, and various functionalities within the corresponding app.

Now, you need to fully associate and imagine based on the following three sources of information to generate long-range, high-level tasks/instructions that are possible within the current app:
1. A recalled screenshot of a specific screen
2. Several screenshots in short-term memory that have transition relationships with this screenshot (screens that can be reached from the current screen)
3. Importantly, some functionalities retrieved from long-term memory that are associated with the current screen (semantically related functionalities from other screens in the same app)

Based on these three sources of information, you should fully associate, imagine, and generate long-range, high-level tasks/instructions that are possible within the current app.

**Guidelines**

1. The provided screenshots and functionalities are only a portion of your recalled memories serving as context. Your ONLY task is to synthesize clear multi-step GUI instructions. The instructions you synthesize do not need to have direct connections with the current screen or operations, but can be inferred from the context. However, to ensure the difficulty and complexity of generated tasks, you are encouraged to analyze, associate, and combine functionalities from your memories.

2. There are two types of tasks to generate:
   - **Action tasks**: Require performing a series of actions to accomplish a goal. For example: "Set an alarm for tomorrow at 8 AM that repeats every weekday."
   - **Question-answering tasks**: Require performing a series of actions and answering a question related to the environment's content. For example: "In my to-do list, how many tasks need to be completed this Wednesday? Answer the question with a single number."
   You should decide which type of task is appropriate to generate based on the context.

3. Synthesized tasks **must be clear and explicit**. Generated tasks should be specific with sufficient details, so that executors will not feel confused. For example, "Help me create a new event in the calendar" is too broad. It should include concrete configurations, e.g., date, time, title, description, duration, location, etc.

4. Synthesized tasks must be executable. **If you want to generate a task that involves operating on app data (for example, deleting an entry in the calendar), you MUST make sure the data you want to operate on is present in the given screenshots.**

5. Generated tasks should be diverse. Do not only focus on the app's main functions. Try to cover all functionalities of the app as much as possible, for example, elements or functions in corners of screens, or functionalities you associate from memories.

6. Generated tasks should be long-range. Do not generate single-step tasks such as clicking a button. You are encouraged to generate tasks that require executors to reason, plan, and complete in multiple steps. **You can also consider combining different sub-functions or sub-tasks into a long-range task, but ensure reasonableness.**

7. Generated tasks should be high-level. **Do not generate step-by-step instructions and detailed actions.** Instead, integrate multi-step instructions into a high-level intent to increase task difficulty. **They should be a single command that contains specific details, rather than step-by-step operations for completing a task.**

8. Generated tasks should start from the phone's home screen, not from the currently provided screen. Do not generate tasks that are bound to temporary states of the current interface (for example, a popup dialog that appears).

9. The operating environment is a virtual device with no network connection. Do not generate tasks that require internet connection or login. However, you can freely use data that is already saved in the existing app.

**Example Tasks**

Here are examples showing bad tasks and their improved versions:

Example 1:
- Bad: "Access and manage the list of all saved Bluetooth devices."
- Reason: Does not specify what "manage" means.
- Good: "View all existing Bluetooth devices, and if any exist, delete all of them."

Example 2:
- Bad: "Add a new recipe to the list using the plus button on the main recipe screen."
- Reason: Does not specify concrete content.
- Good: "In the Broccoli app, add a new recipe for 'Tomato and Egg Stir-fry', set the category to 'Stir-fry', and fill in the description as 'Mom's favorite dish'."

Example 3:
- Bad: "Check the battery usage statistics and enable Battery Saver mode if necessary."
- Reason: "If necessary" will confuse the executor.
- Good: "Write the top three items from battery usage statistics into the Markor app and save it as 'battery_usage_statistics', and enable Battery Saver mode."

Example 4:
- Bad: "Dismiss the voice search connection error by tapping the 'Keyboard' button, then manually type 'The Beatles' in the search bar."
- Reason: Includes a temporary state and assumes starting from the search interface.
- Good: "In {app name}, how many songs are included for The Beatles and Taylor Swift respectively? Answer with numbers separated by a comma."

Example 5:
- Bad: "In the Broccoli app, use the search function to find the recipe 'Salmon with Dill Sauce'. Open its details page and answer how many servings it yields."
- Reason: Contains too many specific operations; should be more high-level.
- Good: "In the Broccoli app, how many servings does 'Salmon with Dill Sauce' provide, and what is the total preparation time required?"

Example 6:
- Bad: "In Simple Calendar Pro, navigate to the 'Customize colors' menu, attempt to change the App icon color, and dismiss the warning popup."
- Reason: Contains unnecessary specific operations and temporary states.
- Good: "Set the app color of Simple Calendar Pro to blue."

Example 7:
- Bad: "In the Tasks app, what tasks do I have?"
- Reason: Too vague.
- Good: "In the Tasks app, which tasks due this week are not completed yet? Answer with titles only; if there are multiple, separate them with commas."

Example 8:
- Bad: "In the Audio Recorder app, configure the settings for high-fidelity recording. After entering the app, navigate to the setup menu and change the recording format to Wav, set the sample rate to 48kHz..."
- Reason: Contains too many step-by-step operations.
- Good: "Record an audio file in Wav format with 48kHz sample rate and Stereo channel using Audio Recorder, and save it as test_audio.""#;

pub const SYNTHESIS_TASK_FOOTER: &str = r#"## Your Task
Based on the above context, carefully analyze and think, then generate 1--3 high-quality GUI tasks. Each task should be a concise but high-level instruction in English. Output format (JSON array):
[
  {"reasoning": "...", "task": "task instruction 1"},
  {"reasoning": "...", "task": "task instruction 2"}
]"#;

pub const SCORING_SYSTEM: &str = r#"You review synthesized mobile GUI task instructions before they are executed by an agent.

Rate the instruction on three criteria, each an integer from 1 (worst) to 5 (best):
- complexity: how many distinct steps and app features the task requires
- clarity: whether every required value and target is stated explicitly, with nothing left for the executor to guess
- reasonableness: whether a real user would plausibly ask for this and whether it is executable offline from the home screen

Output a single JSON object and nothing else:
{"complexity": <int>, "clarity": <int>, "reasonableness": <int>}"#;

pub fn scoring_user(app_name: &str, instruction: &str) -> String {
    format!("App: {app_name}\nInstruction: {instruction}")
}

pub const AGENT_SYSTEM: &str = r#"You are a mobile GUI agent operating an Android app to complete a task for the user.

At each step you receive the task, the current screenshot, the list of on-screen elements and your previous actions. Choose exactly one next action.

Available actions (JSON):
{"kind": "click", "element_id": <int>}
{"kind": "type", "element_id": <int>, "text": "<string>"}
{"kind": "back"}
{"kind": "complete"}
{"kind": "answer", "text": "<string>"}

Use "complete" once the task is done, or "answer" to finish a question-answering task with its answer.

Output a single JSON object and nothing else:
{"thought": "<your reasoning>", "action": <action>}"#;

pub const MONITOR_SYSTEM: &str = r#"You supervise a mobile GUI agent while it executes a task.

You receive the task, the agent's recent actions, and the last two screenshots (before and after the most recent action). Decide whether the most recent action caused the agent to deviate from productive progress toward the task objective, for example by opening an unrelated screen, changing a setting the task does not ask for, or repeating an action with no effect.

Output a single JSON object and nothing else:
{"deviated": true or false, "analysis": "<what went wrong and how to get back on track; empty if no deviation>"}"#;

pub const JUDGE_SYSTEM: &str = r#"You judge whether a mobile GUI agent successfully completed a task.

You receive the task, the full list of actions the agent executed, and the final screenshot. Decide whether the final state satisfies every requirement of the task, and for question-answering tasks whether the agent's answer is correct.

Output a single JSON object and nothing else:
{"success": true or false, "reason": "<short justification>"}"#;

pub const REWRITE_SYSTEM: &str = r#"You improve the reasoning traces of a mobile GUI agent for supervised training.

You receive the task, the earlier steps, the current screen and the action that was taken, together with the original thought. Rewrite the thought so that it observes the current screen, relates it to the task and to any earlier mistakes, and justifies exactly the given action. Never change the action.

Output the rewritten thought as plain text only."#;

pub fn rewrite_user(
    instruction: &str,
    history: &str,
    screen: &str,
    action: &str,
    thought: &str,
) -> String {
    format!(
        "Task: {instruction}\n\nPrevious steps:\n{history}\n\nCurrent screen elements:\n{screen}\n\nAction taken: {action}\nOriginal thought: {thought}"
    )
}

pub const DECOMPOSE_SYSTEM: &str = r#"You decompose mobile GUI task instructions into the atomic app functionalities they require.

An atomic functionality is a short verb phrase naming a single capability an app must offer, such as "create calendar event", "set date", "set title" or "set start time". List each required functionality once.

Output a JSON list of strings only."#;

pub fn decompose_user(task: &str) -> String {
    format!("Task: {task}")
}
