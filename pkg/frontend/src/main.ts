import { mountStudio } from "./ui";

window.addEventListener("DOMContentLoaded", () => {
  mountStudio();
});
