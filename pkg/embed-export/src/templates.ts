/** The fixed prompt-template set; one {category} slot each. */

export const PROMPT_TEMPLATES: readonly string[] = [
  'An image of a {category}.',
  'This is an image of a {category}.',
  'An image of a small {category}.',
  'An image of a medium {category}.',
  'An image of a large {category}.',
  'An image of a {category} within the context.',
  'An image of the {category} within the context.',
  'An image of the {category} within the context.',
  'A resized image of a{category} within the context.',
  'This falls under a {category} within the context.',
  'This falls under the {category} within the context.',
  'This falls under one {category} within the context.',
];

export class EmptyCategoryError extends Error {}

export function expandTemplates(category: string): string[] {
  if (!category.trim()) {
    throw new EmptyCategoryError('cannot build prompts for an empty category name');
  }
  return PROMPT_TEMPLATES.map((t) => t.replaceAll('{category}', category));
}
